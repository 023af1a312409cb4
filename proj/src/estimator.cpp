#include "traceconf/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "traceconf/errors.hpp"
#include "traceconf/metrics.hpp"
#include "traceconf/rng.hpp"

namespace traceconf {

using kernels::exec;

void estimator_config::validate() const {
    if (l_max < 1 || channels < 1 || blocks < 1 || head_hidden < 1 || kernel < 1) {
        throw validation_error("estimator_config: dimensions must be positive");
    }
    if (kernel % 2 == 0) {
        throw validation_error("estimator_config: kernel size must be odd");
    }
    if (learning_rate <= 0.0 || batch_size < 1 || max_epochs < 1 || patience < 1) {
        throw validation_error("estimator_config: bad training hyperparameters");
    }
    if (alignment == align_mode::window) {
        throw validation_error("estimator_config: alignment must be tail or head");
    }
}

const tensor_spec& param_layout::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw validation_error("param_layout: no tensor named " + name);
}

param_layout make_layout(const estimator_config& config) {
    param_layout layout;
    size_t offset = 0;
    auto add = [&](const std::string& name, std::vector<int> shape) {
        size_t size = 1;
        for (const int d : shape) size *= static_cast<size_t>(d);
        layout.tensors.push_back({name, std::move(shape), offset, size});
        offset += size;
    };
    const int c = config.channels;
    const int k = config.kernel;
    const int h = config.head_hidden;
    add("stem.weight", {c, 1, k});
    add("stem.bias", {c});
    for (int b = 0; b < config.blocks; ++b) {
        const std::string prefix = "block" + std::to_string(b);
        add(prefix + ".conv1.weight", {c, c, k});
        add(prefix + ".conv1.bias", {c});
        add(prefix + ".conv2.weight", {c, c, k});
        add(prefix + ".conv2.bias", {c});
    }
    add("head.fc1.weight", {h, c});
    add("head.fc1.bias", {h});
    add("head.fc2.weight", {1, h});
    add("head.fc2.bias", {1});
    layout.total = offset;
    return layout;
}

void aligned_batch::append(const aligned_trajectory& a) {
    if (count == 0) {
        l_max = a.size();
    } else if (a.size() != l_max) {
        throw validation_error("aligned_batch: inconsistent lengths");
    }
    values.insert(values.end(), a.values.begin(), a.values.end());
    mask.insert(mask.end(), a.mask.begin(), a.mask.end());
    ++count;
}

namespace {

// Typed pointers into the flat parameter (or gradient) vector.
struct param_view {
    const estimator_config* config = nullptr;
    double* stem_w = nullptr;
    double* stem_b = nullptr;
    struct block_view {
        double* c1w;
        double* c1b;
        double* c2w;
        double* c2b;
    };
    std::vector<block_view> blocks;
    double* h1w = nullptr;
    double* h1b = nullptr;
    double* h2w = nullptr;
    double* h2b = nullptr;
};

param_view make_view(const estimator_config& config, const param_layout& layout,
                     double* base) {
    param_view v;
    v.config = &config;
    v.stem_w = base + layout.find("stem.weight").offset;
    v.stem_b = base + layout.find("stem.bias").offset;
    for (int b = 0; b < config.blocks; ++b) {
        const std::string p = "block" + std::to_string(b);
        v.blocks.push_back({base + layout.find(p + ".conv1.weight").offset,
                            base + layout.find(p + ".conv1.bias").offset,
                            base + layout.find(p + ".conv2.weight").offset,
                            base + layout.find(p + ".conv2.bias").offset});
    }
    v.h1w = base + layout.find("head.fc1.weight").offset;
    v.h1b = base + layout.find("head.fc1.bias").offset;
    v.h2w = base + layout.find("head.fc2.weight").offset;
    v.h2b = base + layout.find("head.fc2.bias").offset;
    return v;
}

double stable_sigmoid(double z) {
    double p;
    if (z >= 0.0) {
        const double e = std::exp(-z);
        p = 1.0 / (1.0 + e);
    } else {
        const double e = std::exp(z);
        p = e / (1.0 + e);
    }
    // keep the score strictly inside (0, 1)
    return std::clamp(p, 1e-300, 1.0 - 1e-16);
}

struct forward_cache {
    int n = 0, len = 0, c = 0, h = 0;
    std::vector<double> input;                   // normalized, masked [n][1][len]
    std::vector<double> stem_out;                // [n][c][len], masked
    std::vector<std::vector<double>> block_in;   // activations entering each block
    std::vector<std::vector<double>> block_pre1; // conv1 output, masked (pre-relu)
    std::vector<std::vector<double>> block_act;  // relu(block_pre1)
    std::vector<std::vector<double>> block_pre2; // conv2 output, masked
    std::vector<double> pooled;                  // [n][c]
    std::vector<double> z1;                      // head hidden pre-activation [n][h]
    std::vector<double> a1;                      // relu(z1)
    std::vector<double> logits;                  // [n]
    std::vector<double> scores;                  // [n]
};

void run_forward(const estimator_checkpoint& ckpt, const aligned_batch& batch, exec mode,
                 forward_cache& fc) {
    const estimator_config& cfg = ckpt.config;
    if (batch.l_max != cfg.l_max) {
        throw validation_error("forward: input length " + std::to_string(batch.l_max) +
                               " does not match checkpoint l_max " +
                               std::to_string(cfg.l_max));
    }
    if (ckpt.norm_std <= 0.0) {
        throw validation_error("forward: checkpoint normalization std must be > 0");
    }
    auto view = make_view(cfg, ckpt.layout, const_cast<double*>(ckpt.params.data()));

    const int n = batch.count;
    const int len = cfg.l_max;
    const int c = cfg.channels;
    const long plane = static_cast<long>(n) * len;
    const long volume = static_cast<long>(n) * c * len;

    fc.n = n;
    fc.len = len;
    fc.c = c;
    fc.h = cfg.head_hidden;

    // standardize unmasked values, zero the pads
    fc.input.assign(static_cast<size_t>(plane), 0.0);
    const double inv_std = 1.0 / ckpt.norm_std;
    for (long i = 0; i < plane; ++i) {
        if (batch.mask[static_cast<size_t>(i)]) {
            fc.input[static_cast<size_t>(i)] =
                (batch.values[static_cast<size_t>(i)] - ckpt.norm_mean) * inv_std;
        }
    }

    fc.stem_out.assign(static_cast<size_t>(volume), 0.0);
    kernels::conv1d_forward(mode, fc.input.data(), fc.stem_out.data(), view.stem_w,
                            view.stem_b, n, 1, c, len, cfg.kernel);
    kernels::apply_mask(mode, fc.stem_out.data(), batch.mask.data(), n, c, len);

    fc.block_in.assign(static_cast<size_t>(cfg.blocks), {});
    fc.block_pre1.assign(static_cast<size_t>(cfg.blocks), {});
    fc.block_act.assign(static_cast<size_t>(cfg.blocks), {});
    fc.block_pre2.assign(static_cast<size_t>(cfg.blocks), {});

    const std::vector<double>* current = &fc.stem_out;
    for (int b = 0; b < cfg.blocks; ++b) {
        auto& bin = fc.block_in[static_cast<size_t>(b)];
        auto& pre1 = fc.block_pre1[static_cast<size_t>(b)];
        auto& act = fc.block_act[static_cast<size_t>(b)];
        auto& pre2 = fc.block_pre2[static_cast<size_t>(b)];
        bin = *current;
        pre1.assign(static_cast<size_t>(volume), 0.0);
        act.assign(static_cast<size_t>(volume), 0.0);
        pre2.assign(static_cast<size_t>(volume), 0.0);

        const auto& bw = view.blocks[static_cast<size_t>(b)];
        kernels::conv1d_forward(mode, bin.data(), pre1.data(), bw.c1w, bw.c1b, n, c, c, len,
                                cfg.kernel);
        kernels::apply_mask(mode, pre1.data(), batch.mask.data(), n, c, len);
        kernels::relu_forward(mode, pre1.data(), act.data(), volume);
        kernels::conv1d_forward(mode, act.data(), pre2.data(), bw.c2w, bw.c2b, n, c, c, len,
                                cfg.kernel);
        kernels::apply_mask(mode, pre2.data(), batch.mask.data(), n, c, len);
        kernels::add_inplace(mode, pre2.data(), bin.data(), volume);  // identity skip
        current = &pre2;
    }

    fc.pooled.assign(static_cast<size_t>(n) * c, 0.0);
    kernels::masked_mean_pool(mode, current->data(), batch.mask.data(), fc.pooled.data(), n, c,
                              len);

    // two-layer head
    const int hh = cfg.head_hidden;
    fc.z1.assign(static_cast<size_t>(n) * hh, 0.0);
    fc.a1.assign(static_cast<size_t>(n) * hh, 0.0);
    fc.logits.assign(static_cast<size_t>(n), 0.0);
    fc.scores.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double* hrow = fc.pooled.data() + static_cast<long>(i) * c;
        double* z1row = fc.z1.data() + static_cast<long>(i) * hh;
        double* a1row = fc.a1.data() + static_cast<long>(i) * hh;
        for (int j = 0; j < hh; ++j) {
            double acc = view.h1b[j];
            const double* wrow = view.h1w + static_cast<long>(j) * c;
            for (int q = 0; q < c; ++q) acc += wrow[q] * hrow[q];
            z1row[j] = acc;
            a1row[j] = acc > 0.0 ? acc : 0.0;
        }
        double logit = view.h2b[0];
        for (int j = 0; j < hh; ++j) logit += view.h2w[j] * a1row[j];
        fc.logits[static_cast<size_t>(i)] = logit;
        fc.scores[static_cast<size_t>(i)] = stable_sigmoid(logit);
    }
}

constexpr double kBceClampLo = 1e-7;
constexpr double kBceClampHi = 1.0 - 1e-7;

}  // namespace

estimator_checkpoint init_estimator(const estimator_config& config) {
    config.validate();
    estimator_checkpoint ckpt;
    ckpt.config = config;
    ckpt.layout = make_layout(config);
    ckpt.params.assign(ckpt.layout.total, 0.0);

    // fan-in-scaled uniform weights, zero biases, drawn in layout order
    rng gen(config.seed);
    auto view = make_view(config, ckpt.layout, ckpt.params.data());
    auto fill = [&gen](double* w, size_t count, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (size_t i = 0; i < count; ++i) {
            w[i] = (2.0 * gen.uniform() - 1.0) * bound;
        }
    };
    const int c = config.channels;
    const int k = config.kernel;
    fill(view.stem_w, static_cast<size_t>(c) * k, k);
    for (auto& b : view.blocks) {
        fill(b.c1w, static_cast<size_t>(c) * c * k, c * k);
        fill(b.c2w, static_cast<size_t>(c) * c * k, c * k);
    }
    fill(view.h1w, static_cast<size_t>(config.head_hidden) * c, c);
    fill(view.h2w, static_cast<size_t>(config.head_hidden), config.head_hidden);
    return ckpt;
}

std::vector<double> forward_batch(const estimator_checkpoint& ckpt, const aligned_batch& batch,
                                  std::vector<double>* embeddings, kernels::exec mode) {
    forward_cache fc;
    run_forward(ckpt, batch, mode, fc);
    if (embeddings) *embeddings = fc.pooled;
    return fc.scores;
}

trace_score forward(const estimator_checkpoint& ckpt, const aligned_trajectory& input,
                    kernels::exec mode) {
    aligned_batch batch;
    batch.append(input);
    std::vector<double> emb;
    const auto scores = forward_batch(ckpt, batch, &emb, mode);
    trace_score out;
    out.score = scores.front();
    out.embedding = std::move(emb);
    return out;
}

double weighted_bce(const std::vector<double>& scores, const std::vector<int>& labels,
                    double w_pos, double w_neg) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw validation_error("weighted_bce: score/label size mismatch");
    }
    if (w_pos < 0.0 || w_neg < 0.0) {
        throw validation_error("weighted_bce: class weights must be >= 0");
    }
    double total = 0.0;
    for (size_t i = 0; i < scores.size(); ++i) {
        const double p = std::clamp(scores[i], kBceClampLo, kBceClampHi);
        const int y = labels[i];
        if (y != 0 && y != 1) throw validation_error("weighted_bce: labels must be 0 or 1");
        total += y == 1 ? -w_pos * std::log(p) : -w_neg * std::log(1.0 - p);
    }
    return total / static_cast<double>(scores.size());
}

double backward(const estimator_checkpoint& ckpt, const aligned_batch& batch,
                const std::vector<int>& labels, double w_pos, double w_neg,
                std::vector<double>& grad, kernels::exec mode) {
    const estimator_config& cfg = ckpt.config;
    forward_cache fc;
    run_forward(ckpt, batch, mode, fc);
    const double loss = weighted_bce(fc.scores, labels, w_pos, w_neg);

    grad.assign(ckpt.layout.total, 0.0);
    auto pview = make_view(cfg, ckpt.layout, const_cast<double*>(ckpt.params.data()));
    auto gview = make_view(cfg, ckpt.layout, grad.data());

    const int n = fc.n;
    const int len = fc.len;
    const int c = fc.c;
    const int hh = fc.h;
    const long volume = static_cast<long>(n) * c * len;
    const double inv_n = 1.0 / static_cast<double>(n);

    // loss -> logits
    std::vector<double> dlogit(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        const double p = fc.scores[static_cast<size_t>(i)];
        double dp = 0.0;
        if (p > kBceClampLo && p < kBceClampHi) {  // clamp zeroes the gradient outside
            dp = labels[static_cast<size_t>(i)] == 1 ? -w_pos / p : w_neg / (1.0 - p);
        }
        dlogit[static_cast<size_t>(i)] = dp * p * (1.0 - p) * inv_n;
    }

    // head
    std::vector<double> dpooled(static_cast<size_t>(n) * c, 0.0);
    for (int i = 0; i < n; ++i) {
        const double gl = dlogit[static_cast<size_t>(i)];
        const double* a1row = fc.a1.data() + static_cast<long>(i) * hh;
        const double* z1row = fc.z1.data() + static_cast<long>(i) * hh;
        const double* hrow = fc.pooled.data() + static_cast<long>(i) * c;
        double* dhrow = dpooled.data() + static_cast<long>(i) * c;
        gview.h2b[0] += gl;
        for (int j = 0; j < hh; ++j) {
            gview.h2w[j] += gl * a1row[j];
            const double dz1 = z1row[j] > 0.0 ? gl * pview.h2w[j] : 0.0;
            if (dz1 != 0.0) {
                gview.h1b[j] += dz1;
                double* gw1row = gview.h1w + static_cast<long>(j) * c;
                const double* pw1row = pview.h1w + static_cast<long>(j) * c;
                for (int q = 0; q < c; ++q) {
                    gw1row[q] += dz1 * hrow[q];
                    dhrow[q] += dz1 * pw1row[q];
                }
            }
        }
    }

    // pool
    std::vector<double> dcur(static_cast<size_t>(volume), 0.0);
    kernels::masked_mean_pool_backward(mode, dpooled.data(), batch.mask.data(), dcur.data(), n,
                                       c, len);

    // residual blocks in reverse
    std::vector<double> dtmp(static_cast<size_t>(volume), 0.0);
    for (int b = cfg.blocks - 1; b >= 0; --b) {
        const auto& bw = pview.blocks[static_cast<size_t>(b)];
        const auto& gw = gview.blocks[static_cast<size_t>(b)];
        const auto& bin = fc.block_in[static_cast<size_t>(b)];
        const auto& pre1 = fc.block_pre1[static_cast<size_t>(b)];
        const auto& act = fc.block_act[static_cast<size_t>(b)];

        // d(pre2) = dcur (mask already holds: pool/backprop only touches valid positions)
        kernels::apply_mask(mode, dcur.data(), batch.mask.data(), n, c, len);

        // conv2
        kernels::conv1d_backward_params(mode, dcur.data(), act.data(), gw.c2w, gw.c2b, n, c, c,
                                        len, cfg.kernel);
        std::fill(dtmp.begin(), dtmp.end(), 0.0);
        kernels::conv1d_backward_input(mode, dcur.data(), dtmp.data(), bw.c2w, n, c, c, len,
                                       cfg.kernel);

        // relu + conv1-output mask
        kernels::relu_backward(mode, pre1.data(), dtmp.data(), dtmp.data(), volume);
        kernels::apply_mask(mode, dtmp.data(), batch.mask.data(), n, c, len);

        // conv1
        kernels::conv1d_backward_params(mode, dtmp.data(), bin.data(), gw.c1w, gw.c1b, n, c, c,
                                        len, cfg.kernel);
        std::vector<double> dskip = dcur;  // identity-skip branch
        std::fill(dcur.begin(), dcur.end(), 0.0);
        kernels::conv1d_backward_input(mode, dtmp.data(), dcur.data(), bw.c1w, n, c, c, len,
                                       cfg.kernel);
        kernels::add_inplace(mode, dcur.data(), dskip.data(), volume);
    }

    // stem
    kernels::apply_mask(mode, dcur.data(), batch.mask.data(), n, c, len);
    kernels::conv1d_backward_params(mode, dcur.data(), fc.input.data(), gview.stem_w,
                                    gview.stem_b, n, 1, c, len, cfg.kernel);
    return loss;
}

labeled_batch align_groups(const std::vector<question_group>& groups,
                           const estimator_config& config) {
    labeled_batch out;
    for (const auto& g : groups) {
        for (const auto& tr : g.traces) {
            const aligned_trajectory a = config.alignment == align_mode::head
                                             ? head_align(tr.trajectory, config.l_max)
                                             : tail_align(tr.trajectory, config.l_max);
            out.batch.append(a);
            out.labels.push_back(tr.label);
            out.question_ids.push_back(tr.question_id);
            out.trace_ids.push_back(tr.trace_id);
        }
    }
    return out;
}

namespace {

aligned_batch slice_batch(const aligned_batch& all, const std::vector<size_t>& rows) {
    aligned_batch out;
    out.count = static_cast<int>(rows.size());
    out.l_max = all.l_max;
    out.values.reserve(rows.size() * static_cast<size_t>(all.l_max));
    out.mask.reserve(rows.size() * static_cast<size_t>(all.l_max));
    for (const size_t r : rows) {
        const size_t off = r * static_cast<size_t>(all.l_max);
        out.values.insert(out.values.end(), all.values.begin() + off,
                          all.values.begin() + off + all.l_max);
        out.mask.insert(out.mask.end(), all.mask.begin() + off,
                        all.mask.begin() + off + all.l_max);
    }
    return out;
}

std::vector<double> score_in_chunks(const estimator_checkpoint& ckpt,
                                    const aligned_batch& all, int chunk, exec mode) {
    std::vector<double> scores;
    scores.reserve(static_cast<size_t>(all.count));
    for (int start = 0; start < all.count; start += chunk) {
        std::vector<size_t> rows;
        const int end = std::min(all.count, start + chunk);
        for (int r = start; r < end; ++r) rows.push_back(static_cast<size_t>(r));
        const aligned_batch part = slice_batch(all, rows);
        const auto s = forward_batch(ckpt, part, nullptr, mode);
        scores.insert(scores.end(), s.begin(), s.end());
    }
    return scores;
}

}  // namespace

estimator_checkpoint train_aligned(const estimator_config& config, const labeled_batch& train,
                                   const labeled_batch& val, training_log* log,
                                   kernels::exec mode) {
    config.validate();
    if (train.batch.count == 0 || val.batch.count == 0) {
        throw validation_error("train: empty train or validation set");
    }

    // question-level hygiene: enforced, not assumed
    std::set<std::string> train_qs(train.question_ids.begin(), train.question_ids.end());
    for (const auto& q : val.question_ids) {
        if (train_qs.count(q)) {
            throw validation_error("train: question \"" + q +
                                   "\" appears in both train and validation splits");
        }
    }

    long n_pos = 0;
    for (const int y : train.labels) n_pos += y;
    const long n_total = static_cast<long>(train.labels.size());
    const long n_neg = n_total - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw validation_error(
            "train: training set contains a single class; class weights are undefined; "
            "provide data with both correct and incorrect traces");
    }
    // inverse class frequency, normalized so the mean weight over examples is 1
    const double w_pos = static_cast<double>(n_total) / (2.0 * static_cast<double>(n_pos));
    const double w_neg = static_cast<double>(n_total) / (2.0 * static_cast<double>(n_neg));

    estimator_checkpoint ckpt = init_estimator(config);

    // input standardization over unmasked training values
    double sum = 0.0;
    long cnt = 0;
    for (size_t i = 0; i < train.batch.values.size(); ++i) {
        if (train.batch.mask[i]) {
            sum += train.batch.values[i];
            ++cnt;
        }
    }
    if (cnt == 0) {
        throw validation_error("train: no unmasked values in the training set");
    }
    const double mean = sum / static_cast<double>(cnt);
    double var = 0.0;
    for (size_t i = 0; i < train.batch.values.size(); ++i) {
        if (train.batch.mask[i]) {
            const double d = train.batch.values[i] - mean;
            var += d * d;
        }
    }
    var /= static_cast<double>(cnt);
    ckpt.norm_mean = mean;
    ckpt.norm_std = var > 0.0 ? std::sqrt(var) : 1.0;

    // Adam state
    const size_t n_params = ckpt.params.size();
    std::vector<double> m(n_params, 0.0), v(n_params, 0.0), grad;
    constexpr double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    long step = 0;

    rng shuffle_gen(config.seed ^ 0x9e3779b97f4a7c15ull);
    std::vector<size_t> order(train.labels.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    std::vector<double> best_params = ckpt.params;
    double best_auc = -1.0;
    int best_epoch = -1;
    int since_best = 0;

    if (log) {
        log->weight_pos = w_pos;
        log->weight_neg = w_neg;
        log->epochs.clear();
    }

    for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
        shuffle_gen.shuffle(order);
        double epoch_loss = 0.0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(config.batch_size)) {
            const size_t end = std::min(order.size(), start + static_cast<size_t>(config.batch_size));
            std::vector<size_t> rows(order.begin() + static_cast<long>(start),
                                     order.begin() + static_cast<long>(end));
            const aligned_batch part = slice_batch(train.batch, rows);
            std::vector<int> part_labels;
            part_labels.reserve(rows.size());
            for (const size_t r : rows) part_labels.push_back(train.labels[r]);

            const double loss = backward(ckpt, part, part_labels, w_pos, w_neg, grad, mode);
            epoch_loss += loss * static_cast<double>(rows.size());

            ++step;
            const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
            const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
            for (size_t i = 0; i < n_params; ++i) {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                const double m_hat = m[i] / bc1;
                const double v_hat = v[i] / bc2;
                ckpt.params[i] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + adam_eps);
            }
        }
        epoch_loss /= static_cast<double>(order.size());

        const auto val_scores = score_in_chunks(ckpt, val.batch, config.batch_size, mode);
        const double val_auc = auc({val_scores, val.labels});
        if (log) log->epochs.push_back({epoch, epoch_loss, val_auc});

        if (val_auc > best_auc) {
            best_auc = val_auc;
            best_epoch = epoch;
            best_params = ckpt.params;
            since_best = 0;
        } else {
            ++since_best;
            if (since_best >= config.patience) break;
        }
    }

    ckpt.params = std::move(best_params);
    if (log) {
        log->best_epoch = best_epoch;
        log->best_val_auc = best_auc;
    }
    return ckpt;
}

estimator_checkpoint train(const estimator_config& config,
                           const std::vector<question_group>& train_groups,
                           const std::vector<question_group>& val_groups, training_log* log,
                           kernels::exec mode) {
    return train_aligned(config, align_groups(train_groups, config),
                         align_groups(val_groups, config), log, mode);
}

}  // namespace traceconf
