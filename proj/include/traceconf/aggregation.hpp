#pragma once

#include <map>
#include <string>
#include <vector>

#include "traceconf/dataset.hpp"

namespace traceconf {

// Per-trace scalar scores from any scorer, keyed by trace id.
using score_table = std::map<std::string, double>;

struct vote_entry {
    std::string trace_id;
    std::string answer;
    double score = 1.0;
};

struct vote_input {
    std::vector<vote_entry> entries;
};

struct answer_tally {
    std::string answer;  // canonical form
    double weight = 0.0;
    int count = 0;
};

struct vote_result {
    std::string chosen;                 // canonical answer attaining the max tally
    std::vector<answer_tally> tallies;  // sorted by (weight, count, answer) descending
    std::vector<std::string> retained;  // trace ids that voted
};

enum class vote_mode { weighted, majority, filtered };

vote_mode vote_mode_from_string(const std::string& s);
std::string to_string(vote_mode m);

// Tally per canonical answer = sum of its traces' scores (summed in sorted
// order, so the result is independent of input permutation). Ties break by
// higher trace count, then lexicographically smallest answer.
vote_result weighted_vote(const vote_input& input);

// weighted_vote with every score replaced by 1.
vote_result majority_vote(const vote_input& input);

// Retain the ceil(eta * n) highest-scoring traces (cutoff ties resolved in
// trace_id order), then weighted_vote on the retained set. With
// majority_after the retained set votes unweighted instead.
vote_result filtered_vote(const vote_input& input, double eta, bool majority_after = false);

// Fraction of questions whose chosen answer matches the canonical ground
// truth. Every group must carry a ground truth and every trace a score.
double evaluate_aggregation(const std::vector<question_group>& groups,
                            const score_table& scores, vote_mode mode, double eta = 0.1,
                            bool filter_then_majority = false);

}  // namespace traceconf
