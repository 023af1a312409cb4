#include "traceconf/analysis.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <thread>

#include "traceconf/aggregation.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/metrics.hpp"

namespace traceconf {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

sweep_kind sweep_kind_from_string(const std::string& s) {
    if (s == "length") return sweep_kind::length;
    if (s == "position") return sweep_kind::window_position;
    if (s == "head-tail") return sweep_kind::head_tail;
    if (s == "grouping") return sweep_kind::grouping;
    throw validation_error("unknown sweep kind: " + s);
}

std::string to_string(sweep_kind k) {
    switch (k) {
        case sweep_kind::length: return "length";
        case sweep_kind::window_position: return "position";
        case sweep_kind::head_tail: return "head-tail";
        case sweep_kind::grouping: return "grouping";
    }
    return "?";
}

void sweep_spec::validate() const {
    if (seeds.empty()) throw validation_error("sweep_spec: seeds must be non-empty");
    if (kind != sweep_kind::window_position && grid.empty()) {
        throw validation_error("sweep_spec: grid must be non-empty");
    }
    for (const int g : grid) {
        if (g < 1) throw validation_error("sweep_spec: grid values must be >= 1");
    }
    if (kind == sweep_kind::window_position && (window_size < 1 || window_stride < 1)) {
        throw validation_error("sweep_spec: window size and stride must be >= 1");
    }
    if (workers < 1) throw validation_error("sweep_spec: workers must be >= 1");
    if (!retrain_per_point && fixed_checkpoint_path.empty()) {
        throw validation_error("sweep_spec: fixed policy requires a checkpoint path");
    }
}

namespace {

struct job_output {
    std::vector<sweep_record> records;
    std::vector<std::string> warnings;
};

// Ordered deterministic merge: job i's output lands in slot i no matter
// which worker ran it.
std::vector<job_output> run_jobs(const std::vector<std::function<job_output()>>& jobs,
                                 int workers) {
    std::vector<job_output> slots(jobs.size());
    if (jobs.empty()) return slots;
    const int n_workers = std::min<int>(workers, static_cast<int>(jobs.size()));
    if (n_workers <= 1) {
        for (size_t i = 0; i < jobs.size(); ++i) slots[i] = jobs[i]();
        return slots;
    }
    std::atomic<size_t> next{0};
    std::vector<std::thread> pool;
    std::mutex err_mutex;
    std::string first_error;
    for (int w = 0; w < n_workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const size_t i = next.fetch_add(1);
                if (i >= jobs.size()) return;
                try {
                    slots[i] = jobs[i]();
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> lock(err_mutex);
                    if (first_error.empty()) first_error = e.what();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (!first_error.empty()) throw validation_error("sweep job failed: " + first_error);
    return slots;
}

struct split_sets {
    std::vector<question_group> train, val, test;
};

split_sets make_splits(const std::vector<question_group>& dataset, const sweep_spec& spec) {
    const auto assignment = split_questions(dataset, spec.fractions, spec.split_seed);
    return {assignment.select(dataset, split_id::train),
            assignment.select(dataset, split_id::val),
            assignment.select(dataset, split_id::test)};
}

std::vector<question_group> filter_min_length(const std::vector<question_group>& dataset,
                                              int min_length) {
    if (min_length <= 0) return dataset;
    std::vector<question_group> out;
    for (const auto& g : dataset) {
        question_group copy = g;
        copy.traces.clear();
        for (const auto& tr : g.traces) {
            if (tr.trajectory.length() >= min_length) copy.traces.push_back(tr);
        }
        if (!copy.traces.empty()) out.push_back(std::move(copy));
    }
    return out;
}

int max_trace_length(const std::vector<question_group>& dataset) {
    int m = 0;
    for (const auto& g : dataset) {
        for (const auto& tr : g.traces) m = std::max(m, tr.trajectory.length());
    }
    return m;
}

struct test_eval {
    double auc_value = kNaN;
    double dbi_value = kNaN;
    double threshold_acc = kNaN;
    long n_test = 0;
};

// Chunked scoring of pre-aligned rows: AUC, threshold accuracy at 0.5, and
// DBI of the pooled embeddings.
test_eval evaluate_on_batch(const estimator_checkpoint& ckpt, const labeled_batch& data,
                            kernels::exec mode) {
    std::vector<double> scores;
    embedding_set embeddings;
    embeddings.width = static_cast<size_t>(ckpt.config.channels);
    embeddings.labels = data.labels;
    scores.reserve(static_cast<size_t>(data.batch.count));

    const int chunk = std::max(1, ckpt.config.batch_size);
    for (int start = 0; start < data.batch.count; start += chunk) {
        const int end = std::min(data.batch.count, start + chunk);
        aligned_batch part;
        part.count = end - start;
        part.l_max = data.batch.l_max;
        const size_t lo = static_cast<size_t>(start) * data.batch.l_max;
        const size_t hi = static_cast<size_t>(end) * data.batch.l_max;
        part.values.assign(data.batch.values.begin() + lo, data.batch.values.begin() + hi);
        part.mask.assign(data.batch.mask.begin() + lo, data.batch.mask.begin() + hi);
        std::vector<double> emb;
        const auto s = forward_batch(ckpt, part, &emb, mode);
        scores.insert(scores.end(), s.begin(), s.end());
        embeddings.data.insert(embeddings.data.end(), emb.begin(), emb.end());
    }

    test_eval out;
    out.n_test = static_cast<long>(scores.size());
    const labeled_scores ls{scores, data.labels};
    out.auc_value = auc(ls);
    out.threshold_acc = threshold_accuracy(ls, 0.5);
    out.dbi_value = dbi(embeddings);
    return out;
}

test_eval evaluate_checkpoint(const estimator_checkpoint& ckpt,
                              const std::vector<question_group>& test_groups,
                              kernels::exec mode) {
    return evaluate_on_batch(ckpt, align_groups(test_groups, ckpt.config), mode);
}

double baseline_auc(const std::vector<question_group>& test_groups,
                    const std::function<double(const confidence_trajectory&)>& scorer,
                    long* n_out) {
    labeled_scores ls;
    for (const auto& g : test_groups) {
        for (const auto& tr : g.traces) {
            ls.scores.push_back(scorer(tr.trajectory));
            ls.labels.push_back(tr.label);
        }
    }
    if (n_out) *n_out = static_cast<long>(ls.scores.size());
    return auc(ls);
}

// Tail slice of the last `keep` tokens, re-aligned to the fixed checkpoint's
// input length; lets one trained model be probed at shorter visible lengths.
labeled_batch align_tail_slice(const std::vector<question_group>& groups, int keep,
                               int l_max) {
    labeled_batch out;
    for (const auto& g : groups) {
        for (const auto& tr : g.traces) {
            confidence_trajectory sliced;
            const int len = tr.trajectory.length();
            const int take = std::min(len, keep);
            sliced.values.assign(tr.trajectory.values.end() - take,
                                 tr.trajectory.values.end());
            out.batch.append(tail_align(sliced, l_max));
            out.labels.push_back(tr.label);
            out.question_ids.push_back(tr.question_id);
            out.trace_ids.push_back(tr.trace_id);
        }
    }
    return out;
}

// --------------------------------------------------------------------------
// per-kind sweeps
// --------------------------------------------------------------------------

sweep_result sweep_length_like(const sweep_spec& spec,
                               const std::vector<question_group>& dataset,
                               kernels::exec mode) {
    const split_sets splits = make_splits(dataset, spec);
    const int max_len = max_trace_length(dataset);

    sweep_result result;
    result.kind = spec.kind;
    const bool head_and_tail = spec.kind == sweep_kind::head_tail;

    std::vector<std::function<job_output()>> jobs;
    for (const int l : spec.grid) {
        const bool exceeds = l > max_len;

        if (spec.kind == sweep_kind::length) {
            // deterministic TailConf companion at matched tail length
            jobs.push_back([&, l, exceeds]() {
                job_output out;
                long n_test = 0;
                const double a = baseline_auc(
                    splits.test,
                    [l](const confidence_trajectory& t) { return tail_conf(t, l); }, &n_test);
                out.records.push_back({"tailconf", static_cast<double>(l), -1, a, kNaN, kNaN,
                                       n_test, exceeds});
                return out;
            });
        }

        if (!spec.retrain_per_point) {
            jobs.push_back([&, l, exceeds]() {
                job_output out;
                const estimator_checkpoint ckpt = load_checkpoint(spec.fixed_checkpoint_path);
                const labeled_batch data =
                    align_tail_slice(splits.test, l, ckpt.config.l_max);
                const test_eval ev = evaluate_on_batch(ckpt, data, mode);
                out.records.push_back({"neuralconf_fixed", static_cast<double>(l), -1,
                                       ev.auc_value, ev.dbi_value, ev.threshold_acc, ev.n_test,
                                       exceeds});
                return out;
            });
            continue;
        }

        for (const uint64_t seed : spec.seeds) {
            const std::vector<align_mode> modes =
                head_and_tail ? std::vector<align_mode>{align_mode::tail, align_mode::head}
                              : std::vector<align_mode>{spec.base_config.alignment};
            for (const align_mode am : modes) {
                jobs.push_back([&, l, seed, am, exceeds]() {
                    job_output out;
                    estimator_config cfg = spec.base_config;
                    cfg.l_max = l;
                    cfg.seed = seed;
                    cfg.alignment = am;
                    const estimator_checkpoint ckpt =
                        train(cfg, splits.train, splits.val, nullptr, mode);
                    const test_eval ev = evaluate_checkpoint(ckpt, splits.test, mode);
                    std::string method = "neuralconf";
                    if (head_and_tail) {
                        method += am == align_mode::head ? "_head" : "_tail";
                    }
                    out.records.push_back({method, static_cast<double>(l),
                                           static_cast<long>(seed), ev.auc_value, ev.dbi_value,
                                           ev.threshold_acc, ev.n_test, exceeds});
                    return out;
                });
            }
        }
    }

    const auto slots = run_jobs(jobs, spec.workers);
    for (const auto& s : slots) {
        result.records.insert(result.records.end(), s.records.begin(), s.records.end());
        result.warnings.insert(result.warnings.end(), s.warnings.begin(), s.warnings.end());
    }
    return result;
}

sweep_result sweep_grouping(const sweep_spec& spec,
                            const std::vector<question_group>& dataset, kernels::exec) {
    const split_sets splits = make_splits(dataset, spec);
    const int max_len = max_trace_length(dataset);

    sweep_result result;
    result.kind = spec.kind;
    for (const int g : spec.grid) {
        const int stride = spec.grouping_tile ? g : spec.baselines.group_stride;
        long n_test = 0;
        const double a = baseline_auc(
            splits.test,
            [&](const confidence_trajectory& t) {
                return bottom_group_conf(t, g, spec.baselines.bottom_fraction, stride);
            },
            &n_test);
        result.records.push_back(
            {"bottom10conf", static_cast<double>(g), -1, a, kNaN, kNaN, n_test, g > max_len});
    }
    return result;
}

struct window_bucket {
    double distance = 0.0;
    labeled_batch rows;  // all rows; split applied later via question ids
};

void append_row(labeled_batch& dst, const labeled_batch& src, size_t i) {
    aligned_trajectory row;
    const size_t off = i * static_cast<size_t>(src.batch.l_max);
    row.values.assign(src.batch.values.begin() + off,
                      src.batch.values.begin() + off + src.batch.l_max);
    row.mask.assign(src.batch.mask.begin() + off,
                    src.batch.mask.begin() + off + src.batch.l_max);
    dst.batch.append(row);
    dst.labels.push_back(src.labels[i]);
    dst.question_ids.push_back(src.question_ids[i]);
    dst.trace_ids.push_back(src.trace_ids[i]);
}

struct bucket_splits {
    labeled_batch train, val, test;
};

bucket_splits split_rows(const labeled_batch& rows, const split_assignment& assignment) {
    bucket_splits out;
    for (size_t i = 0; i < rows.labels.size(); ++i) {
        const auto it = assignment.by_question.find(rows.question_ids[i]);
        if (it == assignment.by_question.end()) continue;
        switch (it->second) {
            case split_id::train: append_row(out.train, rows, i); break;
            case split_id::val: append_row(out.val, rows, i); break;
            case split_id::test: append_row(out.test, rows, i); break;
        }
    }
    return out;
}

sweep_result sweep_window_position(const sweep_spec& spec,
                                   const std::vector<question_group>& dataset,
                                   kernels::exec mode) {
    const auto assignment = split_questions(dataset, spec.fractions, spec.split_seed);

    // bucket rows by window centre distance; distances are shared across
    // traces because windows are end-anchored
    std::map<double, window_bucket> buckets;
    for (const auto& g : dataset) {
        for (const auto& tr : g.traces) {
            const auto windows = sliding_windows(tr.trajectory, spec.window_size,
                                                 spec.window_stride,
                                                 spec.include_short_windows);
            for (const auto& w : windows) {
                auto& b = buckets[w.window_center_distance];
                b.distance = w.window_center_distance;
                b.rows.batch.append(w);
                b.rows.labels.push_back(tr.label);
                b.rows.question_ids.push_back(tr.question_id);
                b.rows.trace_ids.push_back(tr.trace_id);
            }
        }
    }

    estimator_config base = spec.base_config;
    base.l_max = spec.window_size;
    base.alignment = align_mode::tail;

    sweep_result result;
    result.kind = spec.kind;
    std::vector<std::function<job_output()>> jobs;

    if (spec.share_position_model) {
        // one model per seed over all window positions, evaluated per bucket
        for (const uint64_t seed : spec.seeds) {
            jobs.push_back([&, seed]() {
                job_output out;
                labeled_batch train_rows, val_rows;
                for (const auto& [distance, bucket] : buckets) {
                    (void)distance;
                    const bucket_splits parts = split_rows(bucket.rows, assignment);
                    for (size_t i = 0; i < parts.train.labels.size(); ++i) {
                        append_row(train_rows, parts.train, i);
                    }
                    for (size_t i = 0; i < parts.val.labels.size(); ++i) {
                        append_row(val_rows, parts.val, i);
                    }
                }
                estimator_config cfg = base;
                cfg.seed = seed;
                estimator_checkpoint ckpt;
                try {
                    ckpt = train_aligned(cfg, train_rows, val_rows, nullptr, mode);
                } catch (const validation_error& e) {
                    out.warnings.push_back("shared position model seed " +
                                           std::to_string(seed) + " skipped: " + e.what());
                    return out;
                }
                for (const auto& [distance, bucket] : buckets) {
                    const bucket_splits parts = split_rows(bucket.rows, assignment);
                    try {
                        const test_eval ev = evaluate_on_batch(ckpt, parts.test, mode);
                        out.records.push_back({"neuralconf", distance,
                                               static_cast<long>(seed), ev.auc_value,
                                               ev.dbi_value, ev.threshold_acc, ev.n_test,
                                               false});
                    } catch (const validation_error& e) {
                        out.warnings.push_back("position bucket " + format_double(distance) +
                                               " seed " + std::to_string(seed) +
                                               " skipped: " + e.what());
                    }
                }
                return out;
            });
        }
    } else {
        for (const auto& [distance, bucket] : buckets) {
            for (const uint64_t seed : spec.seeds) {
                const window_bucket* bp = &bucket;
                const double dist = distance;
                jobs.push_back([&, bp, dist, seed]() {
                    job_output out;
                    const bucket_splits parts = split_rows(bp->rows, assignment);
                    estimator_config cfg = base;
                    cfg.seed = seed;
                    try {
                        const estimator_checkpoint ckpt =
                            train_aligned(cfg, parts.train, parts.val, nullptr, mode);
                        const test_eval ev = evaluate_on_batch(ckpt, parts.test, mode);
                        out.records.push_back({"neuralconf", dist, static_cast<long>(seed),
                                               ev.auc_value, ev.dbi_value, ev.threshold_acc,
                                               ev.n_test, false});
                    } catch (const validation_error& e) {
                        out.warnings.push_back("position bucket " + format_double(dist) +
                                               " seed " + std::to_string(seed) +
                                               " skipped: " + e.what());
                    }
                    return out;
                });
            }
        }
    }

    const auto slots = run_jobs(jobs, spec.workers);
    for (const auto& s : slots) {
        result.records.insert(result.records.end(), s.records.begin(), s.records.end());
        result.warnings.insert(result.warnings.end(), s.warnings.begin(), s.warnings.end());
    }
    return result;
}

}  // namespace

sweep_result run_sweep(const sweep_spec& spec, const std::vector<question_group>& dataset,
                       kernels::exec mode) {
    spec.validate();
    const auto filtered = filter_min_length(dataset, spec.min_length);
    if (filtered.empty()) {
        throw validation_error("run_sweep: dataset is empty after min-length filtering");
    }
    switch (spec.kind) {
        case sweep_kind::length:
        case sweep_kind::head_tail:
            return sweep_length_like(spec, filtered, mode);
        case sweep_kind::grouping:
            return sweep_grouping(spec, filtered, mode);
        case sweep_kind::window_position:
            return sweep_window_position(spec, filtered, mode);
    }
    throw validation_error("run_sweep: bad kind");
}

}  // namespace traceconf
