#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <map>

#include "doctest.h"
#include "traceconf/aggregation.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/rng.hpp"

using namespace traceconf;

namespace {

vote_input make_input(const std::vector<std::pair<std::string, double>>& answers_scores) {
    vote_input input;
    int i = 0;
    for (const auto& [answer, score] : answers_scores) {
        input.entries.push_back({"t" + std::to_string(i++), answer, score});
    }
    return input;
}

vote_input random_input(rng& gen, int max_n = 12) {
    vote_input input;
    const int n = 1 + static_cast<int>(gen.uniform_int(static_cast<uint64_t>(max_n)));
    for (int i = 0; i < n; ++i) {
        const std::string answer(1, static_cast<char>('a' + gen.uniform_int(4)));
        input.entries.push_back(
            {"t" + std::to_string(i), answer, 0.05 + gen.uniform() * 0.9});
    }
    return input;
}

// counting oracle for majority voting
std::string majority_oracle(const vote_input& input) {
    std::map<std::string, int> counts;
    for (const auto& e : input.entries) counts[normalize_answer(e.answer)] += 1;
    std::string best;
    int best_count = -1;
    for (const auto& [answer, count] : counts) {
        if (count > best_count) {  // map order = lexicographic, first wins ties
            best = answer;
            best_count = count;
        }
    }
    return best;
}

}  // namespace

TEST_CASE("weighted vote reduces to majority under equal scores") {
    const auto res = weighted_vote(make_input({{"A", 1}, {"A", 1}, {"B", 1}}));
    CHECK(res.chosen == "a");
    CHECK(res.tallies.front().weight == doctest::Approx(2.0));
    CHECK(res.tallies.back().weight == doctest::Approx(1.0));
}

TEST_CASE("weighting can overturn the majority") {
    CHECK(weighted_vote(make_input({{"A", 0.9}, {"B", 0.3}})).chosen == "a");
    const auto res = weighted_vote(make_input({{"A", 0.2}, {"A", 0.2}, {"B", 0.9}}));
    CHECK(res.chosen == "b");
}

TEST_CASE("majority vote ties break deterministically") {
    CHECK(majority_vote(make_input({{"A", 5}, {"A", 1}, {"B", 9}})).chosen == "a");
    // tie on count: lexicographically smallest canonical answer
    CHECK(majority_vote(make_input({{"B", 1}, {"A", 1}})).chosen == "a");
    CHECK(majority_vote(make_input({{"b", 1}, {"B", 1}, {"A", 1}})).chosen == "b");
}

TEST_CASE("majority matches the counting oracle on random inputs") {
    rng gen(6);
    for (int iter = 0; iter < 300; ++iter) {
        const auto input = random_input(gen);
        CHECK(majority_vote(input).chosen == majority_oracle(input));
    }
}

TEST_CASE("reduction: constant-score weighted equals majority on random inputs") {
    rng gen(61);
    for (int iter = 0; iter < 10000; ++iter) {
        auto input = random_input(gen, 10);
        for (auto& e : input.entries) e.score = 1.0;
        CHECK(weighted_vote(input).chosen == majority_vote(input).chosen);
    }
}

TEST_CASE("positive scaling never changes the chosen answer") {
    rng gen(62);
    for (int iter = 0; iter < 10000; ++iter) {
        const auto input = random_input(gen, 10);
        const std::string base = weighted_vote(input).chosen;
        auto scaled = input;
        const double lambda = 0.01 + gen.uniform() * 50.0;
        for (auto& e : scaled.entries) e.score *= lambda;
        CHECK(weighted_vote(scaled).chosen == base);
    }
}

TEST_CASE("permutation invariance of tallies and choice") {
    rng gen(63);
    for (int iter = 0; iter < 500; ++iter) {
        auto input = random_input(gen, 10);
        const auto base = weighted_vote(input);
        gen.shuffle(input.entries);
        const auto shuffled = weighted_vote(input);
        CHECK(base.chosen == shuffled.chosen);
        REQUIRE(base.tallies.size() == shuffled.tallies.size());
        for (size_t i = 0; i < base.tallies.size(); ++i) {
            CHECK(base.tallies[i].answer == shuffled.tallies[i].answer);
            CHECK(base.tallies[i].weight == shuffled.tallies[i].weight);  // bitwise
        }
    }
}

TEST_CASE("filtered vote basics") {
    // n=10, eta=0.1 keeps exactly the single best trace
    vote_input input;
    for (int i = 0; i < 10; ++i) {
        input.entries.push_back({"t" + std::to_string(i), i == 3 ? "win" : "lose",
                                 i == 3 ? 0.99 : 0.1 + 0.01 * i});
    }
    const auto res = filtered_vote(input, 0.1);
    CHECK(res.retained.size() == 1);
    CHECK(res.chosen == "win");

    // eta = 1 keeps everything and equals weighted_vote
    rng gen(64);
    for (int iter = 0; iter < 200; ++iter) {
        const auto rand_in = random_input(gen);
        const auto full = filtered_vote(rand_in, 1.0);
        CHECK(full.retained.size() == rand_in.entries.size());
        CHECK(full.chosen == weighted_vote(rand_in).chosen);
    }

    CHECK_THROWS_AS(filtered_vote(input, 0.0), validation_error);
    CHECK_THROWS_AS(filtered_vote(input, 1.5), validation_error);
}

TEST_CASE("filtered vote matches a sort-and-cut oracle") {
    rng gen(65);
    for (int iter = 0; iter < 500; ++iter) {
        const auto input = random_input(gen, 15);
        const double eta = 0.05 + gen.uniform() * 0.95;
        const auto res = filtered_vote(input, eta);

        auto order = input.entries;
        std::sort(order.begin(), order.end(), [](const vote_entry& a, const vote_entry& b) {
            if (a.score != b.score) return a.score > b.score;
            return a.trace_id < b.trace_id;
        });
        size_t keep = static_cast<size_t>(
            std::ceil(eta * static_cast<double>(input.entries.size()) - 1e-12));
        keep = std::clamp<size_t>(keep, 1, input.entries.size());
        CHECK(res.retained.size() == keep);

        std::vector<std::string> expect_ids;
        for (size_t i = 0; i < keep; ++i) expect_ids.push_back(order[i].trace_id);
        std::sort(expect_ids.begin(), expect_ids.end());
        CHECK(res.retained == expect_ids);

        // retained-set size is non-decreasing in eta
        const auto res2 = filtered_vote(input, std::min(1.0, eta + 0.3));
        CHECK(res2.retained.size() >= res.retained.size());
    }
}

TEST_CASE("filter-then-majority variant") {
    vote_input input = make_input({{"A", 0.9}, {"B", 0.8}, {"B", 0.7}, {"C", 0.1}});
    // keep 3: A(0.9), B(0.8), B(0.7); majority -> B even though A outscores
    const auto res = filtered_vote(input, 0.75, true);
    CHECK(res.retained.size() == 3);
    CHECK(res.chosen == "b");
    // weighted after filter: A 0.9 < B 1.5 -> also b here
    CHECK(filtered_vote(input, 0.75, false).chosen == "b");
}

namespace {

std::vector<question_group> voting_dataset() {
    // q0: all correct; q1: correct minority with high scores
    std::vector<question_group> groups(2);
    groups[0].question_id = "q0";
    groups[0].ground_truth = "1";
    groups[0].has_ground_truth = true;
    for (int i = 0; i < 3; ++i) {
        trace_record tr;
        tr.trace_id = "q0#" + std::to_string(i);
        tr.question_id = "q0";
        tr.answer = "1";
        tr.label = 1;
        tr.trajectory.values = {1.0};
        groups[0].traces.push_back(tr);
    }
    groups[1].question_id = "q1";
    groups[1].ground_truth = "7";
    groups[1].has_ground_truth = true;
    const char* answers[4] = {"7", "9", "9", "9"};
    for (int i = 0; i < 4; ++i) {
        trace_record tr;
        tr.trace_id = "q1#" + std::to_string(i);
        tr.question_id = "q1";
        tr.answer = answers[i];
        tr.label = i == 0 ? 1 : 0;
        tr.trajectory.values = {1.0};
        groups[1].traces.push_back(tr);
    }
    return groups;
}

}  // namespace

TEST_CASE("evaluate_aggregation: weighting provably beats majority on a planted instance") {
    const auto groups = voting_dataset();
    score_table scores;
    scores["q0#0"] = scores["q0#1"] = scores["q0#2"] = 0.9;
    scores["q1#0"] = 0.95;  // the lone correct trace dominates
    scores["q1#1"] = scores["q1#2"] = scores["q1#3"] = 0.05;

    const double weighted = evaluate_aggregation(groups, scores, vote_mode::weighted);
    const double majority = evaluate_aggregation(groups, scores, vote_mode::majority);
    CHECK(weighted == doctest::Approx(1.0));
    CHECK(majority == doctest::Approx(0.5));
    CHECK(weighted > majority);

    // all traces correct: accuracy 1.0 under every mode
    std::vector<question_group> all_correct(1, groups[0]);
    score_table uniform;
    for (const auto& tr : groups[0].traces) uniform[tr.trace_id] = 1.0;
    CHECK(evaluate_aggregation(all_correct, uniform, vote_mode::weighted) == 1.0);
    CHECK(evaluate_aggregation(all_correct, uniform, vote_mode::majority) == 1.0);
    CHECK(evaluate_aggregation(all_correct, uniform, vote_mode::filtered, 0.5) == 1.0);

    // uniform scores: weighted equals majority exactly
    score_table flat;
    for (const auto& g : groups) {
        for (const auto& tr : g.traces) flat[tr.trace_id] = 1.0;
    }
    CHECK(evaluate_aggregation(groups, flat, vote_mode::weighted) ==
          evaluate_aggregation(groups, flat, vote_mode::majority));
}

TEST_CASE("evaluate_aggregation reports questions without ground truth") {
    auto groups = voting_dataset();
    groups[1].has_ground_truth = false;
    score_table flat;
    for (const auto& g : groups) {
        for (const auto& tr : g.traces) flat[tr.trace_id] = 1.0;
    }
    try {
        evaluate_aggregation(groups, flat, vote_mode::majority);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        CHECK(std::string(e.what()).find("q1") != std::string::npos);
    }
}
