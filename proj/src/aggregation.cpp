#include "traceconf/aggregation.hpp"

#include <algorithm>
#include <cmath>

#include "traceconf/errors.hpp"

namespace traceconf {

vote_mode vote_mode_from_string(const std::string& s) {
    if (s == "weighted") return vote_mode::weighted;
    if (s == "majority") return vote_mode::majority;
    if (s == "filtered") return vote_mode::filtered;
    throw validation_error("unknown vote mode: " + s);
}

std::string to_string(vote_mode m) {
    switch (m) {
        case vote_mode::weighted: return "weighted";
        case vote_mode::majority: return "majority";
        case vote_mode::filtered: return "filtered";
    }
    return "?";
}

namespace {

void check_input(const vote_input& input) {
    if (input.entries.empty()) {
        throw validation_error("vote: empty input");
    }
    for (const auto& e : input.entries) {
        if (!std::isfinite(e.score)) {
            throw validation_error("vote: non-finite score for trace \"" + e.trace_id + "\"");
        }
    }
}

vote_result tally_votes(const vote_input& input) {
    check_input(input);

    // Canonical answer -> multiset of scores. Summing each group in sorted
    // order keeps the tally bitwise independent of input permutation.
    std::map<std::string, std::vector<double>> by_answer;
    for (const auto& e : input.entries) {
        by_answer[normalize_answer(e.answer)].push_back(e.score);
    }

    vote_result result;
    result.tallies.reserve(by_answer.size());
    for (auto& [answer, scores] : by_answer) {
        std::sort(scores.begin(), scores.end());
        double weight = 0.0;
        for (const double s : scores) weight += s;
        result.tallies.push_back({answer, weight, static_cast<int>(scores.size())});
    }

    std::sort(result.tallies.begin(), result.tallies.end(),
              [](const answer_tally& a, const answer_tally& b) {
                  if (a.weight != b.weight) return a.weight > b.weight;
                  if (a.count != b.count) return a.count > b.count;
                  return a.answer < b.answer;
              });
    result.chosen = result.tallies.front().answer;

    result.retained.reserve(input.entries.size());
    for (const auto& e : input.entries) result.retained.push_back(e.trace_id);
    std::sort(result.retained.begin(), result.retained.end());
    return result;
}

}  // namespace

vote_result weighted_vote(const vote_input& input) {
    return tally_votes(input);
}

vote_result majority_vote(const vote_input& input) {
    vote_input unit = input;
    for (auto& e : unit.entries) e.score = 1.0;
    return tally_votes(unit);
}

vote_result filtered_vote(const vote_input& input, double eta, bool majority_after) {
    check_input(input);
    if (!(eta > 0.0 && eta <= 1.0)) {
        throw validation_error("filtered_vote: eta must be in (0, 1]");
    }
    const size_t n = input.entries.size();
    size_t keep = static_cast<size_t>(std::ceil(eta * static_cast<double>(n) - 1e-12));
    keep = std::clamp<size_t>(keep, 1, n);

    std::vector<size_t> order(n);
    for (size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (input.entries[a].score != input.entries[b].score) {
            return input.entries[a].score > input.entries[b].score;
        }
        return input.entries[a].trace_id < input.entries[b].trace_id;
    });

    vote_input retained;
    retained.entries.reserve(keep);
    for (size_t i = 0; i < keep; ++i) {
        retained.entries.push_back(input.entries[order[i]]);
    }
    return majority_after ? majority_vote(retained) : weighted_vote(retained);
}

double evaluate_aggregation(const std::vector<question_group>& groups,
                            const score_table& scores, vote_mode mode, double eta,
                            bool filter_then_majority) {
    if (groups.empty()) {
        throw validation_error("evaluate_aggregation: no question groups");
    }
    std::string missing_gt;
    for (const auto& g : groups) {
        if (!g.has_ground_truth) {
            missing_gt += missing_gt.empty() ? g.question_id : ", " + g.question_id;
        }
    }
    if (!missing_gt.empty()) {
        throw validation_error("evaluate_aggregation: questions without ground truth: " +
                               missing_gt);
    }

    size_t hits = 0;
    for (const auto& g : groups) {
        vote_input input;
        input.entries.reserve(g.traces.size());
        for (const auto& tr : g.traces) {
            auto it = scores.find(tr.trace_id);
            if (it == scores.end()) {
                throw validation_error("evaluate_aggregation: no score for trace \"" +
                                       tr.trace_id + "\"");
            }
            input.entries.push_back({tr.trace_id, tr.answer, it->second});
        }
        vote_result res;
        switch (mode) {
            case vote_mode::weighted: res = weighted_vote(input); break;
            case vote_mode::majority: res = majority_vote(input); break;
            case vote_mode::filtered:
                res = filtered_vote(input, eta, filter_then_majority);
                break;
        }
        if (res.chosen == normalize_answer(g.ground_truth)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(groups.size());
}

}  // namespace traceconf
