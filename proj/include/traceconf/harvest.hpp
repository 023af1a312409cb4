#pragma once

#include <string>
#include <vector>

namespace traceconf {

// Collection settings for an OpenAI-compatible completion endpoint that
// exposes per-token top-k logprobs.
struct harvest_config {
    std::string endpoint;        // base URL, e.g. http://localhost:8000
    std::string model;
    std::string questions_path;  // JSONL: question_id, prompt, ground_truth
    std::string output_path;     // dataset JSONL, appended to on resume
    int traces_per_question = 128;
    int top_k = 20;
    double temperature = 1.0;
    int max_tokens = 512;
    int concurrency = 4;
    int max_retries = 3;
    int backoff_ms = 200;        // doubles per retry
    bool chat = false;           // use /v1/chat/completions
    // Answer extraction: last \boxed{...} group if present, otherwise the
    // last line matching this pattern (capture group 1 if any).
    std::string answer_pattern = "(?:####|answer\\s*(?:is)?\\s*[:=]?)\\s*(.+)";
    std::string api_key_env = "TRACECONF_API_KEY";

    void validate() const;
};

struct harvest_stats {
    long requested = 0;  // traces this run attempted
    long written = 0;
    long skipped = 0;    // failed after retries
    long resumed = 0;    // already present from an earlier run
    std::vector<std::string> warnings;
};

// Samples traces_per_question completions per question, converts top-k
// logprobs to confidence values, extracts final answers, and appends JSONL
// records. Progress is the output file itself: records already present are
// never re-requested, so interrupted runs resume without duplicate ids.
harvest_stats harvest(const harvest_config& config);

// Exposed for tests: \boxed{...} first, else scan lines from the end.
std::string extract_final_answer(const std::string& text, const std::string& pattern);

}  // namespace traceconf
