#include "traceconf/harvest.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <regex>
#include <set>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "traceconf/dataset.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/trajectory.hpp"

namespace traceconf {

using nlohmann::json;

void harvest_config::validate() const {
    if (endpoint.empty()) throw validation_error("harvest: endpoint required");
    if (questions_path.empty()) throw validation_error("harvest: questions file required");
    if (output_path.empty()) throw validation_error("harvest: output path required");
    if (traces_per_question < 1) throw validation_error("harvest: K must be >= 1");
    if (top_k < 1) throw validation_error("harvest: top_k must be >= 1");
    if (concurrency < 1) throw validation_error("harvest: concurrency must be >= 1");
    if (max_retries < 0) throw validation_error("harvest: max_retries must be >= 0");
}

std::string extract_final_answer(const std::string& text, const std::string& pattern) {
    // last \boxed{...} with balanced braces
    const size_t pos = text.rfind("\\boxed{");
    if (pos != std::string::npos) {
        size_t i = pos + 7;
        int depth = 1;
        std::string inner;
        while (i < text.size() && depth > 0) {
            const char c = text[i];
            if (c == '{') ++depth;
            if (c == '}') {
                --depth;
                if (depth == 0) break;
            }
            inner.push_back(c);
            ++i;
        }
        if (depth == 0) return inner;
    }

    const std::regex re(pattern, std::regex::icase);
    std::vector<std::string> lines;
    std::string line;
    std::istringstream stream(text);
    while (std::getline(stream, line)) lines.push_back(line);
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        std::smatch m;
        if (std::regex_search(*it, m, re)) {
            for (size_t g = 1; g < m.size(); ++g) {
                if (m[g].matched) return m[g].str();
            }
            return m.str();
        }
    }
    // fallback: last non-empty line
    for (auto it = lines.rbegin(); it != lines.rend(); ++it) {
        std::string t = *it;
        t.erase(0, t.find_first_not_of(" \t\r\n"));
        const size_t last = t.find_last_not_of(" \t\r\n");
        if (last != std::string::npos) {
            return t.substr(0, last + 1);
        }
    }
    return "";
}

namespace {

struct harvest_question {
    std::string question_id;
    std::string prompt;
    std::string ground_truth;
};

std::vector<harvest_question> read_questions(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open questions file: " + path);
    std::vector<harvest_question> out;
    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw parse_error(path + " line " + std::to_string(line_no) + ": " + e.what());
        }
        for (const char* field : {"question_id", "prompt", "ground_truth"}) {
            if (!rec.contains(field)) {
                throw parse_error(path + " line " + std::to_string(line_no) +
                                  ": missing required field \"" + field + "\"");
            }
        }
        out.push_back({rec.at("question_id").get<std::string>(),
                       rec.at("prompt").get<std::string>(),
                       rec.at("ground_truth").get<std::string>()});
    }
    return out;
}

// Valid records survive a crash; a torn trailing line is dropped by
// rewriting the file with the parseable prefix before appending resumes.
std::set<std::string> recover_existing(const std::string& path) {
    std::set<std::string> ids;
    std::ifstream in(path);
    if (!in) return ids;
    std::vector<std::string> valid_lines;
    std::string line;
    bool truncated = false;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json rec = json::parse(line);
            ids.insert(rec.at("trace_id").get<std::string>());
            valid_lines.push_back(line);
        } catch (const json::exception&) {
            truncated = true;
            break;
        }
    }
    in.close();
    if (truncated) {
        const std::string tmp = path + ".tmp";
        {
            std::ofstream out(tmp, std::ios::binary);
            for (const auto& l : valid_lines) out << l << "\n";
        }
        std::filesystem::rename(tmp, path);
    }
    return ids;
}

struct endpoint_parts {
    std::string base;  // scheme://host[:port]
    std::string path_prefix;
};

endpoint_parts split_endpoint(const std::string& url) {
    const size_t scheme = url.find("://");
    if (scheme == std::string::npos) {
        throw validation_error("harvest: endpoint must include a scheme: " + url);
    }
    const size_t slash = url.find('/', scheme + 3);
    if (slash == std::string::npos) return {url, ""};
    std::string prefix = url.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {url.substr(0, slash), prefix};
}

struct completion {
    std::string text;
    std::vector<std::vector<double>> topk_logprobs;  // per token
};

completion parse_completion_response(const json& body, bool chat) {
    if (!body.contains("choices") || body.at("choices").empty()) {
        throw parse_error("harvest: response has no choices");
    }
    const json& choice = body.at("choices")[0];
    completion out;

    if (chat) {
        out.text = choice.at("message").at("content").get<std::string>();
        if (!choice.contains("logprobs") || choice.at("logprobs").is_null() ||
            !choice.at("logprobs").contains("content")) {
            throw validation_error(
                "harvest: endpoint returned no logprobs; it must support "
                "logprobs/top_logprobs");
        }
        for (const auto& tok : choice.at("logprobs").at("content")) {
            std::vector<double> lps;
            for (const auto& cand : tok.at("top_logprobs")) {
                lps.push_back(cand.at("logprob").get<double>());
            }
            if (lps.empty()) lps.push_back(tok.at("logprob").get<double>());
            out.topk_logprobs.push_back(std::move(lps));
        }
    } else {
        out.text = choice.at("text").get<std::string>();
        if (!choice.contains("logprobs") || choice.at("logprobs").is_null() ||
            !choice.at("logprobs").contains("top_logprobs")) {
            throw validation_error(
                "harvest: endpoint returned no logprobs; it must support the "
                "logprobs parameter");
        }
        for (const auto& tok : choice.at("logprobs").at("top_logprobs")) {
            std::vector<double> lps;
            if (tok.is_object()) {
                for (const auto& [token, lp] : tok.items()) {
                    (void)token;
                    lps.push_back(lp.get<double>());
                }
            } else if (tok.is_array()) {
                for (const auto& cand : tok) lps.push_back(cand.at("logprob").get<double>());
            }
            if (lps.empty()) throw parse_error("harvest: empty top_logprobs entry");
            out.topk_logprobs.push_back(std::move(lps));
        }
    }
    if (out.topk_logprobs.empty()) {
        throw parse_error("harvest: response carried no per-token logprobs");
    }
    return out;
}

}  // namespace

harvest_stats harvest(const harvest_config& config) {
    config.validate();
    const auto questions = read_questions(config.questions_path);
    if (questions.empty()) {
        throw validation_error("harvest: questions file is empty");
    }

    harvest_stats stats;
    const std::set<std::string> existing = recover_existing(config.output_path);
    stats.resumed = static_cast<long>(existing.size());

    struct job {
        const harvest_question* question;
        int index;
    };
    std::vector<job> jobs;
    for (const auto& q : questions) {
        for (int t = 0; t < config.traces_per_question; ++t) {
            const std::string trace_id = q.question_id + "#" + std::to_string(t);
            if (!existing.count(trace_id)) jobs.push_back({&q, t});
        }
    }
    stats.requested = static_cast<long>(jobs.size());
    if (jobs.empty()) return stats;

    const endpoint_parts ep = split_endpoint(config.endpoint);
    const std::string api_path =
        ep.path_prefix + (config.chat ? "/v1/chat/completions" : "/v1/completions");

    const char* key = std::getenv(config.api_key_env.c_str());
    const std::string auth = key ? "Bearer " + std::string(key) : "";

    std::ofstream out(config.output_path, std::ios::binary | std::ios::app);
    if (!out) throw io_error("cannot open output file: " + config.output_path);

    std::mutex write_mutex;
    std::atomic<size_t> next{0};
    std::atomic<bool> fatal{false};
    std::string fatal_message;
    std::mutex fatal_mutex;
    std::set<int> warned_k;

    auto worker = [&]() {
        httplib::Client client(ep.base);
        client.set_connection_timeout(30);
        client.set_read_timeout(300);

        for (;;) {
            if (fatal.load()) return;
            const size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            const job& jb = jobs[i];
            const std::string trace_id =
                jb.question->question_id + "#" + std::to_string(jb.index);

            json request;
            request["model"] = config.model;
            request["max_tokens"] = config.max_tokens;
            request["temperature"] = config.temperature;
            if (config.chat) {
                request["messages"] = json::array(
                    {{{"role", "user"}, {"content", jb.question->prompt}}});
                request["logprobs"] = true;
                request["top_logprobs"] = config.top_k;
            } else {
                request["prompt"] = jb.question->prompt;
                request["logprobs"] = config.top_k;
            }
            const std::string body = request.dump();

            bool done = false;
            std::string last_error;
            for (int attempt = 0; attempt <= config.max_retries && !done; ++attempt) {
                if (attempt > 0) {
                    std::this_thread::sleep_for(
                        std::chrono::milliseconds(config.backoff_ms << (attempt - 1)));
                }
                httplib::Headers headers;
                if (!auth.empty()) headers.emplace("Authorization", auth);
                auto res = client.Post(api_path, headers, body, "application/json");
                if (!res) {
                    last_error = "transport error " + httplib::to_string(res.error());
                    continue;
                }
                if (res->status != 200) {
                    last_error = "HTTP " + std::to_string(res->status);
                    continue;
                }
                try {
                    const json parsed = json::parse(res->body);
                    const completion comp = parse_completion_response(parsed, config.chat);

                    std::vector<topk_record> records;
                    std::vector<int> ks;
                    records.reserve(comp.topk_logprobs.size());
                    for (const auto& lps : comp.topk_logprobs) {
                        records.push_back(topk_record::from_logprobs(lps));
                        ks.push_back(records.back().k());
                    }
                    const confidence_trajectory traj = build_trajectory(records);
                    const int k_min = *std::min_element(ks.begin(), ks.end());

                    const std::string answer =
                        extract_final_answer(comp.text, config.answer_pattern);
                    const int label = normalize_answer(answer) ==
                                              normalize_answer(jb.question->ground_truth)
                                          ? 1
                                          : 0;

                    json rec;
                    rec["trace_id"] = trace_id;
                    rec["question_id"] = jb.question->question_id;
                    rec["answer"] = answer;
                    rec["ground_truth"] = jb.question->ground_truth;
                    rec["label"] = label;
                    rec["confidence"] = traj.values;
                    rec["topk_logprobs"] = comp.topk_logprobs;
                    rec["k"] = k_min;

                    std::lock_guard<std::mutex> lock(write_mutex);
                    if (k_min < config.top_k && !warned_k.count(k_min)) {
                        warned_k.insert(k_min);
                        stats.warnings.push_back(
                            "endpoint returned top-" + std::to_string(k_min) +
                            " logprobs when top-" + std::to_string(config.top_k) +
                            " were requested; confidence computed with the returned k");
                    }
                    out << rec.dump() << "\n";
                    out.flush();
                    ++stats.written;
                    done = true;
                } catch (const validation_error& e) {
                    // endpoint lacking logprobs is a configuration problem, not a retry
                    std::lock_guard<std::mutex> lock(fatal_mutex);
                    fatal.store(true);
                    if (fatal_message.empty()) fatal_message = e.what();
                    return;
                } catch (const std::exception& e) {
                    last_error = e.what();
                }
            }
            if (!done) {
                std::lock_guard<std::mutex> lock(write_mutex);
                ++stats.skipped;
                stats.warnings.push_back("skipped trace " + trace_id + ": " + last_error);
            }
        }
    };

    std::vector<std::thread> pool;
    const int n_workers = std::min<int>(config.concurrency, static_cast<int>(jobs.size()));
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    if (fatal.load()) {
        throw validation_error(fatal_message);
    }
    return stats;
}

}  // namespace traceconf
