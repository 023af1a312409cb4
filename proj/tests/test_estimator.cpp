#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "traceconf/errors.hpp"
#include "traceconf/estimator.hpp"
#include "traceconf/rng.hpp"

using namespace traceconf;
using kernels::exec;

namespace {

estimator_config small_config(int l_max = 8, int channels = 3, int blocks = 1) {
    estimator_config cfg;
    cfg.l_max = l_max;
    cfg.channels = channels;
    cfg.blocks = blocks;
    cfg.kernel = 3;
    cfg.head_hidden = 4;
    cfg.batch_size = 4;
    cfg.seed = 1;
    return cfg;
}

aligned_trajectory random_aligned(rng& gen, int l_max, int valid) {
    confidence_trajectory t;
    for (int i = 0; i < valid; ++i) t.values.push_back(2.0 + gen.normal() * 0.5);
    return tail_align(t, l_max);
}

aligned_batch random_batch(rng& gen, int n, int l_max) {
    aligned_batch batch;
    for (int i = 0; i < n; ++i) {
        const int valid = 1 + static_cast<int>(gen.uniform_int(static_cast<uint64_t>(l_max)));
        batch.append(random_aligned(gen, l_max, valid));
    }
    return batch;
}

}  // namespace

TEST_CASE("zeroed head output weights force score = sigmoid(head bias)") {
    const auto cfg = small_config();
    estimator_checkpoint ckpt = init_estimator(cfg);
    const auto& h2w = ckpt.layout.find("head.fc2.weight");
    const auto& h2b = ckpt.layout.find("head.fc2.bias");
    for (size_t i = 0; i < h2w.size; ++i) ckpt.params[h2w.offset + i] = 0.0;
    ckpt.params[h2b.offset] = 0.3;
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    rng gen(4);
    const double want = 1.0 / (1.0 + std::exp(-0.3));
    for (int i = 0; i < 10; ++i) {
        const auto score = forward(ckpt, random_aligned(gen, cfg.l_max, 1 + i % cfg.l_max));
        CHECK(score.score == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("masked pooling makes pad extension invisible") {
    const auto cfg16 = small_config(16);
    auto cfg24 = cfg16;
    cfg24.l_max = 24;

    // parameter layout does not depend on l_max, so the same seed gives the
    // same weights: the same checkpoint retargeted to a longer pad
    estimator_checkpoint a = init_estimator(cfg16);
    estimator_checkpoint b = init_estimator(cfg24);
    REQUIRE(a.params == b.params);
    a.norm_mean = b.norm_mean = 2.0;
    a.norm_std = b.norm_std = 0.5;

    rng gen(9);
    for (int iter = 0; iter < 20; ++iter) {
        confidence_trajectory t;
        const int len = 1 + static_cast<int>(gen.uniform_int(16));
        for (int i = 0; i < len; ++i) t.values.push_back(2.0 + gen.normal() * 0.4);
        const auto s16 = forward(a, tail_align(t, 16));
        const auto s24 = forward(b, tail_align(t, 24));
        CHECK(s16.score == doctest::Approx(s24.score).epsilon(1e-9));
        REQUIRE(s16.embedding.size() == s24.embedding.size());
        for (size_t c = 0; c < s16.embedding.size(); ++c) {
            CHECK(s16.embedding[c] == doctest::Approx(s24.embedding[c]).epsilon(1e-9));
        }
    }
}

TEST_CASE("forward golden regression value") {
    // fixed random checkpoint + fixed input, pinned after the gradient
    // checks passed
    auto cfg = small_config(8, 3, 2);
    cfg.seed = 77;
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    confidence_trajectory t;
    t.values = {1.5, 2.5, 2.0, 1.75, 2.25};
    const auto score = forward(ckpt, tail_align(t, 8));
    CHECK(score.score == doctest::Approx(0.4990114523482358).epsilon(1e-9));
}

TEST_CASE("all-zero mask falls back to the head bias path") {
    const auto cfg = small_config();
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 0.0;
    ckpt.norm_std = 1.0;

    aligned_trajectory empty;
    empty.values.assign(static_cast<size_t>(cfg.l_max), 0.0);
    empty.mask.assign(static_cast<size_t>(cfg.l_max), 0);
    const auto score = forward(ckpt, empty);
    for (const double h : score.embedding) CHECK(h == 0.0);
    CHECK(score.score > 0.0);
    CHECK(score.score < 1.0);
}

TEST_CASE("mask invariance: mask-0 values never change the score") {
    const auto cfg = small_config(12, 4, 2);
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    rng gen(15);
    for (int iter = 0; iter < 200; ++iter) {
        const int valid = 1 + static_cast<int>(gen.uniform_int(11));
        auto a = random_aligned(gen, cfg.l_max, valid);
        auto b = a;
        for (int i = 0; i < b.size(); ++i) {
            if (!b.mask[static_cast<size_t>(i)]) {
                b.values[static_cast<size_t>(i)] = gen.normal() * 100.0;
            }
        }
        const double sa = forward(ckpt, a).score;
        const double sb = forward(ckpt, b).score;
        CHECK(std::abs(sa - sb) <= 1e-9);
    }
}

TEST_CASE("weighted_bce examples") {
    CHECK(weighted_bce({0.5}, {1}, 1.0, 1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(weighted_bce({1.0 - 1e-9}, {1}, 1.0, 1.0) < 1e-6);  // bounded by the clamp
    CHECK(weighted_bce({1e-12}, {0}, 1.0, 1.0) < 1e-6);
    CHECK_THROWS_AS(weighted_bce({0.5}, {1, 0}, 1.0, 1.0), validation_error);
    CHECK_THROWS_AS(weighted_bce({0.5}, {1}, -1.0, 1.0), validation_error);
}

TEST_CASE("normalized class weights equal balanced resampling in expectation") {
    // 3:1 imbalance; weights n/(2*n_c) as used by train()
    rng gen(33);
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 400; ++i) {
        const int y = i % 4 == 0 ? 1 : 0;
        labels.push_back(y);
        scores.push_back(0.1 + 0.8 * gen.uniform());
    }
    const double n = 400, n_pos = 100, n_neg = 300;
    const double w_pos = n / (2 * n_pos), w_neg = n / (2 * n_neg);
    const double weighted = weighted_bce(scores, labels, w_pos, w_neg);

    // Monte-Carlo oracle: unweighted loss over balanced resamples
    std::vector<size_t> pos_idx, neg_idx;
    for (size_t i = 0; i < labels.size(); ++i) {
        (labels[i] == 1 ? pos_idx : neg_idx).push_back(i);
    }
    double acc = 0.0;
    const int resamples = 4000;
    for (int r = 0; r < resamples; ++r) {
        std::vector<double> s;
        std::vector<int> y;
        for (int j = 0; j < 50; ++j) {
            const size_t ip = pos_idx[gen.uniform_int(pos_idx.size())];
            const size_t in = neg_idx[gen.uniform_int(neg_idx.size())];
            s.push_back(scores[ip]);
            y.push_back(1);
            s.push_back(scores[in]);
            y.push_back(0);
        }
        acc += weighted_bce(s, y, 1.0, 1.0);
    }
    acc /= resamples;
    CHECK(weighted == doctest::Approx(acc).epsilon(0.01));
}

namespace {

// relative error with an absolute floor, the usual gradient-check metric
double rel_err(double a, double f) {
    return std::abs(a - f) / std::max(std::abs(a) + std::abs(f), 1e-4);
}

}  // namespace

TEST_CASE("analytic gradients match central finite differences") {
    rng gen(55);
    const int l_maxes[3] = {4, 8, 16};
    for (int rep = 0; rep < 20; ++rep) {
        estimator_config cfg;
        cfg.l_max = l_maxes[rep % 3];
        cfg.channels = 2 + static_cast<int>(gen.uniform_int(3));
        cfg.blocks = 1 + static_cast<int>(gen.uniform_int(2));
        cfg.kernel = gen.uniform() < 0.5 ? 3 : 5;
        cfg.head_hidden = 2 + static_cast<int>(gen.uniform_int(3));
        cfg.seed = 100 + static_cast<uint64_t>(rep);

        estimator_checkpoint ckpt = init_estimator(cfg);
        ckpt.norm_mean = 2.0;
        ckpt.norm_std = 0.5;

        const int n = 2 + static_cast<int>(gen.uniform_int(4));
        const aligned_batch batch = random_batch(gen, n, cfg.l_max);
        std::vector<int> labels;
        bool has[2] = {false, false};
        for (int i = 0; i < n; ++i) {
            const int y = gen.uniform() < 0.5 ? 1 : 0;
            labels.push_back(y);
            has[y] = true;
        }
        if (!has[0]) labels[0] = 0;
        if (!has[1]) labels.back() = 1;
        const double w_pos = 0.5 + gen.uniform();
        const double w_neg = 0.5 + gen.uniform();

        std::vector<double> grad;
        backward(ckpt, batch, labels, w_pos, w_neg, grad, exec::serial);

        const double step = 1e-5;
        double worst = 0.0;
        for (size_t p = 0; p < ckpt.params.size(); ++p) {
            estimator_checkpoint probe = ckpt;
            probe.params[p] += step;
            const double up = weighted_bce(forward_batch(probe, batch, nullptr, exec::serial),
                                           labels, w_pos, w_neg);
            probe.params[p] = ckpt.params[p] - step;
            const double dn = weighted_bce(forward_batch(probe, batch, nullptr, exec::serial),
                                           labels, w_pos, w_neg);
            const double fd = (up - dn) / (2 * step);
            worst = std::max(worst, rel_err(grad[p], fd));
        }
        CHECK(worst < 1e-4);
    }
}

TEST_CASE("zero weight on one class silences its gradient contribution") {
    const auto cfg = small_config(8, 3, 1);
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    rng gen(77);
    aligned_batch pos_batch, full_batch;
    const auto pos_row = random_aligned(gen, 8, 6);
    const auto neg_row = random_aligned(gen, 8, 5);
    pos_batch.append(pos_row);
    full_batch.append(pos_row);
    full_batch.append(neg_row);

    std::vector<double> g_full, g_pos;
    backward(ckpt, full_batch, {1, 0}, 1.0, 0.0, g_full, exec::serial);
    backward(ckpt, pos_batch, {1}, 1.0, 0.0, g_pos, exec::serial);
    // mean scaling: the two-example batch divides by 2
    for (size_t i = 0; i < g_full.size(); ++i) {
        CHECK(g_full[i] == doctest::Approx(g_pos[i] / 2.0).epsilon(1e-12));
    }
}

TEST_CASE("batch gradients are linear in example contributions") {
    const auto cfg = small_config(8, 3, 1);
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    rng gen(78);
    const auto x = random_aligned(gen, 8, 7);
    const auto y = random_aligned(gen, 8, 4);

    aligned_batch bx, by, bxxy;
    bx.append(x);
    by.append(y);
    bxxy.append(x);
    bxxy.append(x);
    bxxy.append(y);

    std::vector<double> gx, gy, gxxy;
    backward(ckpt, bx, {1}, 1.0, 1.0, gx, exec::serial);
    backward(ckpt, by, {0}, 1.0, 1.0, gy, exec::serial);
    backward(ckpt, bxxy, {1, 1, 0}, 1.0, 1.0, gxxy, exec::serial);
    for (size_t i = 0; i < gx.size(); ++i) {
        // duplicated example contributes twice before the batch mean
        CHECK(3.0 * gxxy[i] == doctest::Approx(2.0 * gx[i] + gy[i]).epsilon(1e-9));
    }
}

TEST_CASE("serial and parallel backward agree bitwise") {
    const auto cfg = small_config(16, 4, 2);
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 2.0;
    ckpt.norm_std = 0.5;

    rng gen(79);
    const aligned_batch batch = random_batch(gen, 6, 16);
    const std::vector<int> labels = {1, 0, 1, 0, 1, 0};
    std::vector<double> g_s, g_p;
    backward(ckpt, batch, labels, 1.3, 0.8, g_s, exec::serial);
    backward(ckpt, batch, labels, 1.3, 0.8, g_p, exec::parallel);
    CHECK(g_s == g_p);
}

namespace {

std::vector<question_group> synthetic_groups(signal_type signal, double magnitude, int seed,
                                             int n_questions = 60) {
    synthetic_spec spec;
    spec.n_questions = n_questions;
    spec.traces_per_question = 8;
    spec.len_min = 24;
    spec.len_max = 48;
    spec.noise_scale = 0.2;
    spec.signal = signal;
    spec.signal_magnitude = magnitude;
    spec.signal_window = 16;
    spec.seed = static_cast<uint64_t>(seed);
    return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("training recovers a large mean shift quickly") {
    const auto groups = synthetic_groups(signal_type::mean_shift, 1.2, 21);
    const auto assignment = split_questions(groups, {0.5, 0.25, 0.25}, 1);

    estimator_config cfg = small_config(32, 8, 1);
    cfg.l_max = 32;
    cfg.batch_size = 32;
    cfg.max_epochs = 20;
    cfg.patience = 20;
    cfg.seed = 0;

    training_log log;
    train(cfg, assignment.select(groups, split_id::train),
          assignment.select(groups, split_id::val), &log);
    CHECK(log.best_val_auc > 0.95);
}

TEST_CASE("training on signal-free data stays near chance") {
    synthetic_spec spec;
    spec.n_questions = 150;
    spec.traces_per_question = 8;
    spec.len_min = 24;
    spec.len_max = 48;
    spec.noise_scale = 0.2;
    spec.signal = signal_type::none;
    spec.seed = 31;
    const auto groups = generate_synthetic(spec);
    const auto assignment = split_questions(groups, {0.5, 0.25, 0.25}, 1);

    estimator_config cfg = small_config(32, 6, 1);
    cfg.l_max = 32;
    cfg.batch_size = 64;
    cfg.max_epochs = 6;
    cfg.patience = 6;
    cfg.seed = 0;

    training_log log;
    train(cfg, assignment.select(groups, split_id::train),
          assignment.select(groups, split_id::val), &log);
    CHECK(log.best_val_auc >= 0.45);
    CHECK(log.best_val_auc <= 0.58);
}

TEST_CASE("training twice with the same seed is bitwise identical") {
    const auto groups = synthetic_groups(signal_type::mean_shift, 1.0, 22, 24);
    const auto assignment = split_questions(groups, {0.5, 0.25, 0.25}, 1);
    const auto tr = assignment.select(groups, split_id::train);
    const auto va = assignment.select(groups, split_id::val);

    estimator_config cfg = small_config(16, 4, 1);
    cfg.l_max = 16;
    cfg.batch_size = 16;
    cfg.max_epochs = 4;
    cfg.patience = 4;
    cfg.seed = 7;

    const auto a = train(cfg, tr, va);
    const auto b = train(cfg, tr, va);
    CHECK(a.params == b.params);
    CHECK(a.norm_mean == b.norm_mean);
    CHECK(a.norm_std == b.norm_std);
}

TEST_CASE("train aborts on question leakage and single-class data") {
    const auto groups = synthetic_groups(signal_type::none, 1.0, 23, 12);
    estimator_config cfg = small_config(16, 3, 1);
    cfg.l_max = 16;
    cfg.max_epochs = 1;

    CHECK_THROWS_AS(train(cfg, groups, groups), validation_error);

    // single-class training set
    auto one_class = groups;
    for (auto& g : one_class) {
        for (auto& tr : g.traces) tr.label = 1;
    }
    const auto assignment = split_questions(groups, {0.5, 0.25, 0.25}, 1);
    CHECK_THROWS_AS(train(cfg, assignment.select(one_class, split_id::train),
                          assignment.select(groups, split_id::val)),
                    validation_error);
}

TEST_CASE("checkpoint round trip and mismatch rejection") {
    namespace fs = std::filesystem;
    auto cfg = small_config(8, 3, 2);
    cfg.seed = 5;
    estimator_checkpoint ckpt = init_estimator(cfg);
    ckpt.norm_mean = 1.9;
    ckpt.norm_std = 0.44;

    const auto path = (fs::temp_directory_path() / "traceconf_ckpt_test.bin").string();
    save_checkpoint(ckpt, path);
    const auto back = load_checkpoint(path);
    CHECK(back.params == ckpt.params);
    CHECK(back.norm_mean == ckpt.norm_mean);
    CHECK(back.norm_std == ckpt.norm_std);
    CHECK(back.config.channels == cfg.channels);
    CHECK(back.config.alignment == cfg.alignment);

    // same scores after reload
    rng gen(3);
    const auto input = random_aligned(gen, 8, 6);
    CHECK(forward(ckpt, input).score == forward(back, input).score);

    // corrupt magic
    {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
    }
    CHECK_THROWS_AS(load_checkpoint(path), validation_error);
    save_checkpoint(ckpt, path);

    // truncated payload
    {
        std::error_code ec;
        const auto size = fs::file_size(path, ec);
        fs::resize_file(path, size - 16, ec);
    }
    CHECK_THROWS_AS(load_checkpoint(path), validation_error);

    // header claiming a different architecture than its tensors carry
    save_checkpoint(ckpt, path);
    {
        std::ifstream in(path, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        std::string bytes = ss.str();
        const auto pos = bytes.find("\"channels\":3");
        REQUIRE(pos != std::string::npos);
        bytes.replace(pos, 12, "\"channels\":4");  // same length, wrong shape
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out << bytes;
    }
    CHECK_THROWS_AS(load_checkpoint(path), validation_error);
    fs::remove(path);
}
