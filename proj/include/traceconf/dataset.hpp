#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "traceconf/trajectory.hpp"

namespace traceconf {

// One sampled reasoning trace with its correctness label.
struct trace_record {
    std::string trace_id;
    std::string question_id;
    std::string answer;
    int label = 0;  // y in {0,1}
    confidence_trajectory trajectory;
};

// All traces sampled for one question.
struct question_group {
    std::string question_id;
    std::string ground_truth;
    bool has_ground_truth = false;
    std::vector<trace_record> traces;
};

enum class split_id { train, val, test };

const char* split_name(split_id s);

struct split_fractions {
    double train = 0.5;
    double val = 0.25;
    double test = 0.25;
};

// Question-level split: every question in exactly one part.
struct split_assignment {
    std::map<std::string, split_id> by_question;

    std::vector<question_group> select(const std::vector<question_group>& groups,
                                       split_id part) const;
};

enum class signal_type { none, mean_shift, tail_trend, tail_variance };

signal_type signal_type_from_string(const std::string& s);
std::string to_string(signal_type s);

// Synthetic population with a correctness signal planted in the trace tail.
// The seed fully determines the output.
struct synthetic_spec {
    int n_questions = 100;
    int traces_per_question = 16;
    double correct_rate = 0.5;        // (0, 1)
    int len_min = 96;
    int len_max = 256;
    double base_mean = 2.0;           // base confidence level before noise
    double noise_scale = 0.25;        // Gaussian sigma; values clipped at 0
    signal_type signal = signal_type::none;
    double signal_magnitude = 1.0;    // mean-shift delta / trend amplitude / sigma multiplier
    int signal_window = 64;           // planted tail length W
    uint64_t seed = 0;

    void validate() const;
};

struct ingest_result {
    std::vector<question_group> groups;  // sorted by question_id
    std::vector<std::string> warnings;

    size_t trace_count() const;
};

// Canonical answer form: trim, lowercase, strip $...$ / \boxed{...} wrappers,
// collapse internal whitespace, canonicalize plain numerics ("3.0" -> "3").
// Total and idempotent.
std::string normalize_answer(const std::string& raw);

// Reads the JSONL trace format. Labels are recomputed from ground truth when
// present (disagreements warn, recomputed wins); otherwise the stored label
// is required. Malformed lines raise parse_error with the line number.
ingest_result ingest(const std::string& path);
ingest_result ingest_stream(std::istream& in, const std::string& origin);

split_assignment split_questions(const std::vector<question_group>& groups,
                                 const split_fractions& fractions, uint64_t seed);

std::vector<question_group> generate_synthetic(const synthetic_spec& spec);

// Writes groups back out in the same JSONL format (confidence values inline).
void write_jsonl(const std::vector<question_group>& groups, const std::string& path);

}  // namespace traceconf
