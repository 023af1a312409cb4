#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "traceconf/errors.hpp"
#include "traceconf/rng.hpp"
#include "traceconf/trajectory.hpp"

using namespace traceconf;

namespace {

confidence_trajectory traj_of(std::vector<double> values) {
    return confidence_trajectory{std::move(values)};
}

// independent oracle: direct evaluation of -(1/k) sum log p
double direct_confidence(const std::vector<double>& probs) {
    double s = 0.0;
    for (const double p : probs) s += std::log(std::max(p, 1e-12));
    return -s / static_cast<double>(probs.size());
}

confidence_trajectory random_traj(rng& gen, int min_len, int max_len) {
    const int len =
        min_len + static_cast<int>(gen.uniform_int(static_cast<uint64_t>(max_len - min_len + 1)));
    confidence_trajectory t;
    for (int i = 0; i < len; ++i) t.values.push_back(gen.uniform() * 5.0);
    return t;
}

}  // namespace

TEST_CASE("token_confidence on uniform top-k collapses to -log p") {
    std::vector<double> p20(20, 0.05);
    CHECK(token_confidence(topk_record::from_probs(p20)) ==
          doctest::Approx(-std::log(0.05)).epsilon(1e-12));
    CHECK(token_confidence(topk_record::from_probs({0.5, 0.5})) ==
          doctest::Approx(-std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("token_confidence matches direct formula evaluation") {
    const std::vector<double> probs = {0.7, 0.2, 0.06, 0.04};
    const double got = token_confidence(topk_record::from_probs(probs));
    CHECK(got == doctest::Approx(direct_confidence(probs)).epsilon(1e-15));
    // frozen regression constant from direct 64-bit evaluation
    CHECK(got == doctest::Approx(1.9995998495002673).epsilon(1e-12));
}

TEST_CASE("token_confidence structural errors") {
    CHECK_THROWS_AS(topk_record::from_probs({}), validation_error);
    CHECK_THROWS_AS(topk_record::from_probs({0.5, -0.1}), validation_error);
    CHECK_THROWS_AS(topk_record::from_probs({0.2, 0.5}), validation_error);  // not sorted
    CHECK_THROWS_AS(topk_record::from_probs({0.9, 0.9}), validation_error);  // sum > 1
}

TEST_CASE("token_confidence clamps zero probabilities") {
    const double c = token_confidence(topk_record::from_probs({1.0, 0.0}));
    CHECK(std::isfinite(c));
    CHECK(c == doctest::Approx(-0.5 * std::log(1e-12)).epsilon(1e-12));
}

TEST_CASE("token_confidence is permutation-invariant and decreasing in each prob") {
    rng gen(42);
    for (int iter = 0; iter < 200; ++iter) {
        const int k = 2 + static_cast<int>(gen.uniform_int(19));
        std::vector<double> raw(static_cast<size_t>(k));
        double sum = 0.0;
        for (auto& p : raw) {
            p = gen.uniform() + 1e-6;
            sum += p;
        }
        for (auto& p : raw) p *= 0.95 / sum;  // headroom for the bump below
        std::sort(raw.begin(), raw.end(), std::greater<double>());

        const double base = token_confidence(topk_record::from_probs(raw));
        // permutation invariance: the formula sums over all entries, so the
        // sorted record is compared against the raw-order direct oracle
        std::vector<double> shuffled = raw;
        gen.shuffle(shuffled);
        CHECK(base == doctest::Approx(direct_confidence(shuffled)).epsilon(1e-12));

        // strictly decreasing in each coordinate above the clamp
        std::vector<double> bumped = raw;
        bumped.back() = std::min(1.0, bumped.back() * 1.01);
        std::sort(bumped.begin(), bumped.end(), std::greater<double>());
        if (bumped.back() > raw.back()) {
            CHECK(token_confidence(topk_record::from_probs(bumped)) < base);
        }
    }
}

TEST_CASE("build_trajectory is element-wise token_confidence") {
    std::vector<topk_record> records;
    records.push_back(topk_record::from_probs({0.5, 0.5}));
    const auto one = build_trajectory(records);
    CHECK(one.length() == 1);
    CHECK(one.values[0] == doctest::Approx(0.6931471805599453).epsilon(1e-12));

    const topk_record uniform20 = topk_record::from_probs(std::vector<double>(20, 0.05));
    const auto triple = build_trajectory({uniform20, uniform20, uniform20});
    REQUIRE(triple.length() == 3);
    for (const double v : triple.values) {
        CHECK(v == doctest::Approx(2.99573).epsilon(1e-5));
    }

    records.push_back(topk_record::from_probs({0.7, 0.2, 0.06, 0.04}));
    records.push_back(topk_record::from_probs(std::vector<double>(20, 0.05)));
    const auto three = build_trajectory(records);
    REQUIRE(three.length() == 3);
    for (int i = 0; i < 3; ++i) {
        CHECK(three.values[static_cast<size_t>(i)] ==
              token_confidence(records[static_cast<size_t>(i)]));
    }

    CHECK_THROWS_AS(build_trajectory({}), validation_error);
}

TEST_CASE("tail_align pads, truncates, and preserves") {
    const auto padded = tail_align(traj_of({1, 2, 3, 4, 5}), 8);
    CHECK(padded.values == std::vector<double>{0, 0, 0, 1, 2, 3, 4, 5});
    CHECK(padded.mask == std::vector<uint8_t>{0, 0, 0, 1, 1, 1, 1, 1});

    const auto cut = tail_align(traj_of({1, 2, 3, 4, 5}), 3);
    CHECK(cut.values == std::vector<double>{3, 4, 5});
    CHECK(cut.mask == std::vector<uint8_t>{1, 1, 1});

    const auto same = tail_align(traj_of({1, 2, 3}), 3);
    CHECK(same.values == std::vector<double>{1, 2, 3});
    CHECK(same.valid_count() == 3);

    CHECK_THROWS_AS(tail_align(traj_of({1}), 0), validation_error);
}

TEST_CASE("head_align mirrors tail_align") {
    const auto cut = head_align(traj_of({1, 2, 3, 4, 5}), 3);
    CHECK(cut.values == std::vector<double>{1, 2, 3});

    const auto padded = head_align(traj_of({1, 2}), 4);
    CHECK(padded.values == std::vector<double>{1, 2, 0, 0});
    CHECK(padded.mask == std::vector<uint8_t>{1, 1, 0, 0});

    const auto same = head_align(traj_of({7, 8}), 2);
    CHECK(same.values == std::vector<double>{7, 8});
}

TEST_CASE("alignment invariants hold on random trajectories") {
    rng gen(7);
    for (int iter = 0; iter < 2000; ++iter) {
        const auto t = random_traj(gen, 1, 40);
        const int l_max = 1 + static_cast<int>(gen.uniform_int(48));
        const auto tail = tail_align(t, l_max);
        const auto head = head_align(t, l_max);

        // mask-value consistency and length conservation
        for (const auto* a : {&tail, &head}) {
            int valid = 0;
            for (int i = 0; i < a->size(); ++i) {
                if (a->mask[static_cast<size_t>(i)] == 0) {
                    CHECK(a->values[static_cast<size_t>(i)] == 0.0);
                } else {
                    ++valid;
                }
            }
            CHECK(valid == std::min(t.length(), l_max));
        }

        // tail/head duality under reversal
        confidence_trajectory rev = t;
        std::reverse(rev.values.begin(), rev.values.end());
        const auto head_of_rev = head_align(rev, l_max);
        auto tail_vals = tail.values;
        auto tail_mask = tail.mask;
        std::reverse(tail_vals.begin(), tail_vals.end());
        std::reverse(tail_mask.begin(), tail_mask.end());
        CHECK(head_of_rev.values == tail_vals);
        CHECK(head_of_rev.mask == tail_mask);

        // monotone nesting: valid values of tail(L) are a suffix of tail(2L)
        if (t.length() >= 2 * l_max) {
            const auto big = tail_align(t, 2 * l_max);
            std::vector<double> small_valid, big_valid;
            for (int i = 0; i < tail.size(); ++i) {
                if (tail.mask[static_cast<size_t>(i)]) {
                    small_valid.push_back(tail.values[static_cast<size_t>(i)]);
                }
            }
            for (int i = 0; i < big.size(); ++i) {
                if (big.mask[static_cast<size_t>(i)]) {
                    big_valid.push_back(big.values[static_cast<size_t>(i)]);
                }
            }
            REQUIRE(big_valid.size() >= small_valid.size());
            CHECK(std::equal(small_valid.begin(), small_valid.end(),
                             big_valid.end() - static_cast<long>(small_valid.size())));
        }
    }
}

TEST_CASE("sliding windows are end-anchored") {
    confidence_trajectory t;
    for (int i = 0; i < 128; ++i) t.values.push_back(i);

    const auto windows = sliding_windows(t, 64, 32);
    REQUIRE(windows.size() == 3);
    // end-first: [64..128), [32..96), [0..64)
    CHECK(windows[0].values.front() == 64.0);
    CHECK(windows[0].values.back() == 127.0);
    CHECK(windows[1].values.front() == 32.0);
    CHECK(windows[2].values.front() == 0.0);
    CHECK(windows[0].window_center_distance == 32.0);
    CHECK(windows[1].window_center_distance == 64.0);
    CHECK(windows[2].window_center_distance == 96.0);
    for (const auto& w : windows) CHECK(w.valid_count() == 64);
}

TEST_CASE("sliding windows exact fit and short trace") {
    confidence_trajectory t64;
    for (int i = 0; i < 64; ++i) t64.values.push_back(1.0);
    CHECK(sliding_windows(t64, 64, 32).size() == 1);

    confidence_trajectory t40;
    for (int i = 0; i < 40; ++i) t40.values.push_back(2.0);
    const auto short_windows = sliding_windows(t40, 64, 32);
    REQUIRE(short_windows.size() == 1);
    CHECK(short_windows[0].valid_count() == 40);
    CHECK(short_windows[0].size() == 64);
    for (int i = 0; i < 24; ++i) CHECK(short_windows[0].mask[static_cast<size_t>(i)] == 0);

    CHECK(sliding_windows(t40, 64, 32, false).empty());
}
