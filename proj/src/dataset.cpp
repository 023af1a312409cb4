#include "traceconf/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/rng.hpp"

namespace traceconf {

using nlohmann::json;

const char* split_name(split_id s) {
    switch (s) {
        case split_id::train: return "train";
        case split_id::val: return "val";
        case split_id::test: return "test";
    }
    return "?";
}

std::vector<question_group> split_assignment::select(
    const std::vector<question_group>& groups, split_id part) const {
    std::vector<question_group> out;
    for (const auto& g : groups) {
        auto it = by_question.find(g.question_id);
        if (it != by_question.end() && it->second == part) {
            out.push_back(g);
        }
    }
    return out;
}

signal_type signal_type_from_string(const std::string& s) {
    if (s == "none") return signal_type::none;
    if (s == "mean-shift") return signal_type::mean_shift;
    if (s == "tail-trend") return signal_type::tail_trend;
    if (s == "tail-variance") return signal_type::tail_variance;
    throw validation_error("unknown signal type: " + s);
}

std::string to_string(signal_type s) {
    switch (s) {
        case signal_type::none: return "none";
        case signal_type::mean_shift: return "mean-shift";
        case signal_type::tail_trend: return "tail-trend";
        case signal_type::tail_variance: return "tail-variance";
    }
    return "?";
}

void synthetic_spec::validate() const {
    if (n_questions < 1 || traces_per_question < 1) {
        throw validation_error("synthetic_spec: counts must be positive");
    }
    if (!(correct_rate > 0.0 && correct_rate < 1.0)) {
        throw validation_error("synthetic_spec: correct_rate must be in (0, 1)");
    }
    if (len_min < 1 || len_max < len_min) {
        throw validation_error("synthetic_spec: bad length range");
    }
    if (noise_scale < 0.0) {
        throw validation_error("synthetic_spec: noise_scale must be >= 0");
    }
    if (signal_window < 1) {
        throw validation_error("synthetic_spec: signal_window must be >= 1");
    }
}

size_t ingest_result::trace_count() const {
    size_t n = 0;
    for (const auto& g : groups) n += g.traces.size();
    return n;
}

// ---------------------------------------------------------------------------
// answer normalization
// ---------------------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    size_t a = 0, b = s.size();
    while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
    while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
    return s.substr(a, b - a);
}

std::string strip_wrappers(std::string s) {
    for (;;) {
        s = trim(s);
        if (s.size() >= 2 && s.front() == '$' && s.back() == '$') {
            s = s.substr(1, s.size() - 2);
            continue;
        }
        constexpr const char* kBoxed = "\\boxed{";
        if (s.rfind(kBoxed, 0) == 0 && s.back() == '}') {
            s = s.substr(7, s.size() - 8);
            continue;
        }
        return s;
    }
}

std::string collapse_whitespace(const std::string& s) {
    std::string out;
    out.reserve(s.size());
    bool in_space = false;
    for (const char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            in_space = true;
        } else {
            if (in_space && !out.empty()) out.push_back(' ');
            in_space = false;
            out.push_back(c);
        }
    }
    return out;
}

bool is_plain_numeric(const std::string& s) {
    size_t i = 0;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
    bool digits = false, dot = false;
    for (; i < s.size(); ++i) {
        if (s[i] >= '0' && s[i] <= '9') {
            digits = true;
        } else if (s[i] == '.' && !dot) {
            dot = true;
        } else {
            return false;
        }
    }
    return digits;
}

// "3.0" -> "3", "+5" -> "5", "0.50" -> "0.5", ".5" -> "0.5", "-0" -> "0"
std::string canonicalize_numeric(const std::string& s) {
    size_t i = 0;
    bool negative = false;
    if (s[i] == '+' || s[i] == '-') {
        negative = s[i] == '-';
        ++i;
    }
    std::string int_part, frac_part;
    bool dot = false;
    for (; i < s.size(); ++i) {
        if (s[i] == '.') {
            dot = true;
        } else {
            (dot ? frac_part : int_part).push_back(s[i]);
        }
    }
    while (int_part.size() > 1 && int_part.front() == '0') int_part.erase(int_part.begin());
    while (!frac_part.empty() && frac_part.back() == '0') frac_part.pop_back();
    if (int_part.empty()) int_part = "0";

    std::string out = int_part;
    if (!frac_part.empty()) out += "." + frac_part;
    if (negative && out != "0") out.insert(out.begin(), '-');
    return out;
}

}  // namespace

std::string normalize_answer(const std::string& raw) {
    std::string s = raw;
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    s = strip_wrappers(s);
    s = collapse_whitespace(s);
    if (is_plain_numeric(s)) {
        s = canonicalize_numeric(s);
    }
    return s;
}

// ---------------------------------------------------------------------------
// JSONL ingest
// ---------------------------------------------------------------------------

namespace {

confidence_trajectory trajectory_from_json(const json& rec, long line_no) {
    confidence_trajectory traj;
    if (rec.contains("confidence")) {
        const auto& arr = rec.at("confidence");
        if (!arr.is_array() || arr.empty()) {
            throw parse_error("line " + std::to_string(line_no) +
                              ": \"confidence\" must be a non-empty array");
        }
        for (const auto& v : arr) {
            if (!v.is_number()) {
                throw parse_error("line " + std::to_string(line_no) +
                                  ": non-numeric confidence value");
            }
            const double c = v.get<double>();
            if (!std::isfinite(c) || c < 0.0) {
                throw parse_error("line " + std::to_string(line_no) +
                                  ": confidence values must be finite and >= 0");
            }
            traj.values.push_back(c);
        }
        return traj;
    }
    if (rec.contains("topk_logprobs")) {
        const auto& steps = rec.at("topk_logprobs");
        if (!steps.is_array() || steps.empty()) {
            throw parse_error("line " + std::to_string(line_no) +
                              ": \"topk_logprobs\" must be a non-empty array");
        }
        std::vector<topk_record> records;
        records.reserve(steps.size());
        for (const auto& step : steps) {
            if (!step.is_array() || step.empty()) {
                throw parse_error("line " + std::to_string(line_no) +
                                  ": each topk_logprobs entry must be a non-empty array");
            }
            std::vector<double> lps;
            lps.reserve(step.size());
            for (const auto& v : step) lps.push_back(v.get<double>());
            try {
                records.push_back(topk_record::from_logprobs(lps));
            } catch (const validation_error& e) {
                throw parse_error("line " + std::to_string(line_no) + ": " + e.what());
            }
        }
        return build_trajectory(records);
    }
    throw parse_error("line " + std::to_string(line_no) +
                      ": missing required field \"confidence\" or \"topk_logprobs\"");
}

std::string require_string(const json& rec, const char* field, long line_no) {
    if (!rec.contains(field)) {
        throw parse_error("line " + std::to_string(line_no) + ": missing required field \"" +
                          field + "\"");
    }
    if (!rec.at(field).is_string()) {
        throw parse_error("line " + std::to_string(line_no) + ": field \"" + field +
                          "\" must be a string");
    }
    return rec.at(field).get<std::string>();
}

}  // namespace

ingest_result ingest_stream(std::istream& in, const std::string& origin) {
    ingest_result result;
    std::map<std::string, question_group> by_question;
    std::set<std::string> seen_trace_ids;

    struct pending_label {
        std::string question_id;
        size_t index;
        bool from_file;
        int file_label;
        long line_no;
    };
    std::vector<pending_label> pending;

    std::string line;
    long line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;

        json rec;
        try {
            rec = json::parse(line);
        } catch (const json::exception& e) {
            throw parse_error(origin + " line " + std::to_string(line_no) + ": " + e.what());
        }

        trace_record tr;
        tr.trace_id = require_string(rec, "trace_id", line_no);
        tr.question_id = require_string(rec, "question_id", line_no);
        tr.answer = require_string(rec, "answer", line_no);
        tr.trajectory = trajectory_from_json(rec, line_no);

        if (!seen_trace_ids.insert(tr.trace_id).second) {
            throw validation_error(origin + " line " + std::to_string(line_no) +
                                   ": duplicate trace_id \"" + tr.trace_id + "\"");
        }

        bool has_file_label = false;
        int file_label = 0;
        if (rec.contains("label")) {
            const auto& lv = rec.at("label");
            if (!lv.is_number_integer() || (lv.get<int>() != 0 && lv.get<int>() != 1)) {
                throw parse_error("line " + std::to_string(line_no) + ": label must be 0 or 1");
            }
            file_label = lv.get<int>();
            has_file_label = true;
        }

        auto& group = by_question[tr.question_id];
        if (group.question_id.empty()) group.question_id = tr.question_id;

        if (rec.contains("ground_truth")) {
            const std::string gt = require_string(rec, "ground_truth", line_no);
            if (!group.has_ground_truth) {
                group.ground_truth = gt;
                group.has_ground_truth = true;
            } else if (group.ground_truth != gt) {
                result.warnings.push_back("line " + std::to_string(line_no) +
                                          ": conflicting ground_truth for question \"" +
                                          tr.question_id + "\"; keeping the first");
            }
        }

        if (has_file_label) {
            tr.label = file_label;
        }
        // Labels resolve after the whole file is read: another record of the
        // same question may still contribute the ground truth.
        pending.push_back({tr.question_id, group.traces.size(), has_file_label, file_label,
                           line_no});
        group.traces.push_back(std::move(tr));
    }

    // Resolve labels now that every group's ground truth is known.
    for (const auto& p : pending) {
        auto& group = by_question.at(p.question_id);
        auto& tr = group.traces[p.index];
        if (group.has_ground_truth) {
            const int recomputed =
                normalize_answer(tr.answer) == normalize_answer(group.ground_truth) ? 1 : 0;
            if (p.from_file && p.file_label != recomputed) {
                result.warnings.push_back(
                    "line " + std::to_string(p.line_no) + ": stored label " +
                    std::to_string(p.file_label) + " disagrees with recomputed label " +
                    std::to_string(recomputed) + " for trace \"" + tr.trace_id +
                    "\"; recomputed label wins");
            }
            tr.label = recomputed;
        } else if (!p.from_file) {
            throw parse_error("line " + std::to_string(p.line_no) +
                              ": missing required field \"label\" (no ground_truth available)");
        }
    }

    result.groups.reserve(by_question.size());
    for (auto& [qid, group] : by_question) {
        (void)qid;
        result.groups.push_back(std::move(group));
    }
    return result;
}

ingest_result ingest(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw io_error("cannot open trace file: " + path);
    }
    return ingest_stream(in, path);
}

// ---------------------------------------------------------------------------
// splits
// ---------------------------------------------------------------------------

split_assignment split_questions(const std::vector<question_group>& groups,
                                 const split_fractions& fractions, uint64_t seed) {
    const double total = fractions.train + fractions.val + fractions.test;
    if (std::abs(total - 1.0) > 1e-9) {
        throw validation_error("split fractions must sum to 1");
    }
    if (fractions.train < 0.0 || fractions.val < 0.0 || fractions.test < 0.0) {
        throw validation_error("split fractions must be non-negative");
    }

    std::vector<std::string> ids;
    ids.reserve(groups.size());
    for (const auto& g : groups) ids.push_back(g.question_id);
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());

    const double fracs[3] = {fractions.train, fractions.val, fractions.test};
    int required = 0;
    for (const double f : fracs) required += f > 0.0 ? 1 : 0;
    if (static_cast<int>(ids.size()) < required) {
        throw validation_error("not enough questions for the requested splits");
    }

    // Largest-remainder allocation of |ids| questions to the three parts.
    const double n = static_cast<double>(ids.size());
    size_t counts[3];
    double remainders[3];
    size_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        const double target = fracs[i] * n;
        counts[i] = static_cast<size_t>(std::floor(target));
        remainders[i] = target - std::floor(target);
        assigned += counts[i];
    }
    while (assigned < ids.size()) {
        int best = 0;
        for (int i = 1; i < 3; ++i) {
            if (remainders[i] > remainders[best]) best = i;
        }
        counts[best] += 1;
        remainders[best] = -1.0;
        ++assigned;
    }

    rng gen(seed);
    gen.shuffle(ids);

    split_assignment out;
    size_t idx = 0;
    const split_id parts[3] = {split_id::train, split_id::val, split_id::test};
    for (int p = 0; p < 3; ++p) {
        for (size_t j = 0; j < counts[p]; ++j, ++idx) {
            out.by_question[ids[idx]] = parts[p];
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// synthetic generation
// ---------------------------------------------------------------------------

std::vector<question_group> generate_synthetic(const synthetic_spec& spec) {
    spec.validate();
    rng gen(spec.seed);

    const int digits = static_cast<int>(std::to_string(spec.n_questions - 1).size());
    auto pad_id = [digits](int i) {
        std::string s = std::to_string(i);
        while (static_cast<int>(s.size()) < digits) s.insert(s.begin(), '0');
        return s;
    };

    std::vector<question_group> groups;
    groups.reserve(static_cast<size_t>(spec.n_questions));
    for (int q = 0; q < spec.n_questions; ++q) {
        question_group group;
        group.question_id = "q" + pad_id(q);
        group.ground_truth = std::to_string(q);
        group.has_ground_truth = true;

        for (int t = 0; t < spec.traces_per_question; ++t) {
            trace_record tr;
            tr.trace_id = group.question_id + "#" + std::to_string(t);
            tr.question_id = group.question_id;

            const bool correct = gen.uniform() < spec.correct_rate;
            const int span = spec.len_max - spec.len_min + 1;
            const int len =
                spec.len_min + static_cast<int>(gen.uniform_int(static_cast<uint64_t>(span)));

            // The planted window is compressed to the trace length when the
            // trace is shorter than W, so the tail-trend ramp always sums to
            // zero and leaks no mean shift.
            const int w_eff = std::min(spec.signal_window, len);
            tr.trajectory.values.reserve(static_cast<size_t>(len));
            for (int i = 0; i < len; ++i) {
                const double z = gen.normal();
                const int tail_pos = i - (len - w_eff);  // >= 0 inside the planted window
                double v = spec.base_mean + spec.noise_scale * z;
                if (correct && tail_pos >= 0) {
                    switch (spec.signal) {
                        case signal_type::none:
                            break;
                        case signal_type::mean_shift:
                            v += spec.signal_magnitude;
                            break;
                        case signal_type::tail_trend: {
                            const double ramp =
                                w_eff == 1 ? 0.0
                                           : spec.signal_magnitude *
                                                 (2.0 * tail_pos - (w_eff - 1)) /
                                                 static_cast<double>(w_eff - 1);
                            v += ramp;
                            break;
                        }
                        case signal_type::tail_variance:
                            v = spec.base_mean + spec.noise_scale * spec.signal_magnitude * z;
                            break;
                    }
                }
                tr.trajectory.values.push_back(std::max(0.0, v));
            }

            if (correct) {
                tr.answer = group.ground_truth;
                tr.label = 1;
            } else {
                tr.answer = "w" + std::to_string(gen.uniform_int(3));
                tr.label = 0;
            }
            group.traces.push_back(std::move(tr));
        }
        groups.push_back(std::move(group));
    }
    return groups;
}

// ---------------------------------------------------------------------------
// JSONL output
// ---------------------------------------------------------------------------

void write_jsonl(const std::vector<question_group>& groups, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw io_error("cannot open output file: " + path);
    }
    for (const auto& g : groups) {
        for (const auto& tr : g.traces) {
            json rec;
            rec["trace_id"] = tr.trace_id;
            rec["question_id"] = tr.question_id;
            rec["answer"] = tr.answer;
            if (g.has_ground_truth) rec["ground_truth"] = g.ground_truth;
            rec["label"] = tr.label;
            rec["confidence"] = tr.trajectory.values;
            out << rec.dump() << "\n";
        }
    }
    if (!out) {
        throw io_error("failed writing: " + path);
    }
}

}  // namespace traceconf
