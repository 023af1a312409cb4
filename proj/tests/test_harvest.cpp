#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "json.hpp"
#include "traceconf/dataset.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/harvest.hpp"
#include "traceconf/trajectory.hpp"

using namespace traceconf;
using nlohmann::json;
namespace fs = std::filesystem;

TEST_CASE("extract_final_answer prefers boxed groups") {
    const std::string pattern = "(?:####|answer\\s*(?:is)?\\s*[:=]?)\\s*(.+)";
    CHECK(extract_final_answer("steps...\nthe result is \\boxed{42}", pattern) == "42");
    CHECK(extract_final_answer("\\boxed{a}\nlater \\boxed{b{c}d}", pattern) == "b{c}d");
    CHECK(extract_final_answer("reasoning\nAnswer: 17", pattern) == "17");
    CHECK(extract_final_answer("#### 9\ntrailing", pattern) == "9");
    CHECK(extract_final_answer("no marker\njust text", pattern) == "just text");
    CHECK(extract_final_answer("", pattern) == "");
}

namespace {

struct mock_server {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> requests{0};
    std::atomic<int> failures_to_inject{0};
    int k_to_return = 20;
    bool include_logprobs = true;

    mock_server() {
        server.Post("/v1/completions", [this](const httplib::Request& req,
                                              httplib::Response& res) {
            ++requests;
            if (failures_to_inject.fetch_sub(1) > 0) {
                res.status = 500;
                res.set_content("injected failure", "text/plain");
                return;
            }
            const json body = json::parse(req.body);
            const std::string prompt = body.at("prompt").get<std::string>();

            json logprob_steps = json::array();
            const int tokens = 6;
            for (int t = 0; t < tokens; ++t) {
                json step = json::object();
                double p = 0.5;
                for (int j = 0; j < k_to_return; ++j) {
                    step["tok" + std::to_string(j)] = std::log(p);
                    p *= 0.5;
                }
                logprob_steps.push_back(step);
            }

            json choice;
            choice["text"] = "thinking...\nThe answer is \\boxed{" +
                             (prompt.find("seven") != std::string::npos ? std::string("7")
                                                                        : std::string("3")) +
                             "}";
            if (include_logprobs) {
                choice["logprobs"] = {{"top_logprobs", logprob_steps}};
            }
            json reply;
            reply["choices"] = json::array({choice});
            res.set_content(reply.dump(), "application/json");
        });

        server.Post("/v1/chat/completions", [this](const httplib::Request&,
                                                   httplib::Response& res) {
            ++requests;
            json content_steps = json::array();
            for (int t = 0; t < 4; ++t) {
                json tops = json::array();
                double p = 0.4;
                for (int j = 0; j < k_to_return; ++j) {
                    tops.push_back({{"token", "t" + std::to_string(j)}, {"logprob", std::log(p)}});
                    p *= 0.5;
                }
                content_steps.push_back(
                    {{"token", "x"}, {"logprob", std::log(0.4)}, {"top_logprobs", tops}});
            }
            json choice;
            choice["message"] = {{"role", "assistant"}, {"content", "Answer: 5"}};
            choice["logprobs"] = {{"content", content_steps}};
            json reply;
            reply["choices"] = json::array({choice});
            res.set_content(reply.dump(), "application/json");
        });

        port = server.bind_to_any_port("127.0.0.1");
        REQUIRE(port > 0);
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }

    ~mock_server() {
        server.stop();
        thread.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }
};

fs::path write_questions() {
    const auto path = fs::temp_directory_path() / "traceconf_questions.jsonl";
    std::ofstream out(path);
    out << R"({"question_id":"q1","prompt":"what is three?","ground_truth":"3"})" << "\n";
    out << R"({"question_id":"q2","prompt":"what is seven?","ground_truth":"7"})" << "\n";
    return path;
}

harvest_config base_config(const mock_server& server, const fs::path& questions,
                           const fs::path& output) {
    harvest_config cfg;
    cfg.endpoint = server.url();
    cfg.model = "mock-model";
    cfg.questions_path = questions.string();
    cfg.output_path = output.string();
    cfg.traces_per_question = 2;
    cfg.top_k = 4;
    cfg.concurrency = 2;
    cfg.max_retries = 2;
    cfg.backoff_ms = 10;
    return cfg;
}

}  // namespace

TEST_CASE("harvest round-trips through ingest without warnings") {
    mock_server server;
    server.k_to_return = 4;
    const auto questions = write_questions();
    const auto output = fs::temp_directory_path() / "traceconf_harvest.jsonl";
    fs::remove(output);

    const auto cfg = base_config(server, questions, output);
    const auto stats = harvest(cfg);
    CHECK(stats.requested == 4);
    CHECK(stats.written == 4);
    CHECK(stats.skipped == 0);
    CHECK(stats.warnings.empty());

    const auto res = ingest(output.string());
    CHECK(res.warnings.empty());
    REQUIRE(res.groups.size() == 2);
    CHECK(res.trace_count() == 4);
    for (const auto& g : res.groups) {
        CHECK(g.has_ground_truth);
        for (const auto& tr : g.traces) {
            CHECK(tr.label == 1);  // the mock answers every question correctly
            CHECK(tr.trajectory.length() == 6);
        }
    }

    // stored confidence equals token_confidence of the stored top-k logprobs
    std::ifstream in(output);
    std::string line;
    while (std::getline(in, line)) {
        const json rec = json::parse(line);
        const auto conf = rec.at("confidence").get<std::vector<double>>();
        const auto steps = rec.at("topk_logprobs").get<std::vector<std::vector<double>>>();
        REQUIRE(conf.size() == steps.size());
        for (size_t i = 0; i < conf.size(); ++i) {
            CHECK(conf[i] ==
                  doctest::Approx(token_confidence(topk_record::from_logprobs(steps[i])))
                      .epsilon(1e-12));
        }
    }

    SUBCASE("resume adds nothing and duplicates nothing") {
        const auto again = harvest(cfg);
        CHECK(again.requested == 0);
        CHECK(again.resumed == 4);
        std::set<std::string> ids;
        std::ifstream in2(output);
        while (std::getline(in2, line)) {
            ids.insert(json::parse(line).at("trace_id").get<std::string>());
        }
        CHECK(ids.size() == 4);
    }

    SUBCASE("a torn trailing line is dropped and re-harvested") {
        {
            std::ofstream append(output, std::ios::app | std::ios::binary);
            append << "{\"trace_id\":\"q2#1\",\"question";  // truncated write
        }
        const auto again = harvest(cfg);
        CHECK(again.requested == 0);
        std::ifstream in2(output);
        size_t lines = 0;
        while (std::getline(in2, line)) {
            ++lines;
            CHECK_NOTHROW(json::parse(line));
        }
        CHECK(lines == 4);
    }

    fs::remove(output);
    fs::remove(questions);
}

TEST_CASE("degraded top-k produces a warning and records k") {
    mock_server server;
    server.k_to_return = 3;  // endpoint can only do top-3
    const auto questions = write_questions();
    const auto output = fs::temp_directory_path() / "traceconf_harvest_k.jsonl";
    fs::remove(output);

    auto cfg = base_config(server, questions, output);
    cfg.top_k = 5;
    const auto stats = harvest(cfg);
    CHECK(stats.written == 4);
    REQUIRE(!stats.warnings.empty());
    CHECK(stats.warnings.front().find("top-3") != std::string::npos);

    std::ifstream in(output);
    std::string line;
    while (std::getline(in, line)) {
        CHECK(json::parse(line).at("k").get<int>() == 3);
    }
    fs::remove(output);
    fs::remove(questions);
}

TEST_CASE("transient failures are retried; persistent ones are skipped") {
    mock_server server;
    server.k_to_return = 4;
    const auto questions = write_questions();
    const auto output = fs::temp_directory_path() / "traceconf_harvest_retry.jsonl";
    fs::remove(output);

    auto cfg = base_config(server, questions, output);
    cfg.concurrency = 1;
    server.failures_to_inject = 1;  // first request fails once, then succeeds
    const auto stats = harvest(cfg);
    CHECK(stats.written == 4);
    CHECK(stats.skipped == 0);

    fs::remove(output);
    server.failures_to_inject = 1000;  // everything fails
    auto cfg2 = cfg;
    cfg2.max_retries = 1;
    const auto stats2 = harvest(cfg2);
    CHECK(stats2.written == 0);
    CHECK(stats2.skipped == 4);
    CHECK(stats2.warnings.size() == 4);

    fs::remove(output);
    fs::remove(questions);
}

TEST_CASE("an endpoint without logprobs is a fatal configuration error") {
    mock_server server;
    server.include_logprobs = false;
    const auto questions = write_questions();
    const auto output = fs::temp_directory_path() / "traceconf_harvest_nolp.jsonl";
    fs::remove(output);

    const auto cfg = base_config(server, questions, output);
    CHECK_THROWS_AS(harvest(cfg), validation_error);
    fs::remove(output);
    fs::remove(questions);
}

TEST_CASE("chat endpoint variant") {
    mock_server server;
    server.k_to_return = 4;
    const auto questions = write_questions();
    const auto output = fs::temp_directory_path() / "traceconf_harvest_chat.jsonl";
    fs::remove(output);

    auto cfg = base_config(server, questions, output);
    cfg.chat = true;
    const auto stats = harvest(cfg);
    CHECK(stats.written == 4);
    const auto res = ingest(output.string());
    CHECK(res.trace_count() == 4);
    for (const auto& g : res.groups) {
        for (const auto& tr : g.traces) {
            CHECK(tr.answer == "5");
            CHECK(tr.trajectory.length() == 4);
        }
    }
    fs::remove(output);
    fs::remove(questions);
}
