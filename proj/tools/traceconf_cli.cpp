// traceconf command-line front end: ingest/harvest data, train the
// estimator, score traces, aggregate answers, run sweeps, render reports.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "traceconf/aggregation.hpp"
#include "traceconf/analysis.hpp"
#include "traceconf/baselines.hpp"
#include "traceconf/dataset.hpp"
#include "traceconf/errors.hpp"
#include "traceconf/estimator.hpp"
#include "traceconf/harvest.hpp"
#include "traceconf/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace traceconf;

namespace {

// Every run leaves its resolved configuration (defaults included) next to
// its outputs, so any result can be reproduced from the artifact alone.
void write_run_config(const CLI::App* cmd, const fs::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write run config: " + path.string());
    out << "# traceconf " << cmd->get_name() << " resolved configuration\n";
    out << cmd->config_to_str(true, false);
}

struct scorer_options {
    std::string name = "tail";  // neuralconf | tail | bottom-group | uniform
    std::string checkpoint_path;
    baseline_config baselines;
};

struct scored_dataset {
    score_table scores;
    std::vector<std::string> trace_order;
    std::map<std::string, int> labels;
    embedding_set embeddings;  // neuralconf only
    bool has_embeddings = false;
};

scored_dataset compute_scores(const std::vector<question_group>& groups,
                              const scorer_options& opt, kernels::exec mode) {
    scored_dataset out;
    if (opt.name == "neuralconf") {
        if (opt.checkpoint_path.empty()) {
            throw validation_error("scorer neuralconf requires --checkpoint");
        }
        const estimator_checkpoint ckpt = load_checkpoint(opt.checkpoint_path);
        out.embeddings.width = static_cast<size_t>(ckpt.config.channels);
        out.has_embeddings = true;
        const int chunk = std::max(1, ckpt.config.batch_size);

        labeled_batch all = align_groups(groups, ckpt.config);
        for (int start = 0; start < all.batch.count; start += chunk) {
            const int end = std::min(all.batch.count, start + chunk);
            aligned_batch part;
            part.count = end - start;
            part.l_max = all.batch.l_max;
            const size_t lo = static_cast<size_t>(start) * all.batch.l_max;
            const size_t hi = static_cast<size_t>(end) * all.batch.l_max;
            part.values.assign(all.batch.values.begin() + lo, all.batch.values.begin() + hi);
            part.mask.assign(all.batch.mask.begin() + lo, all.batch.mask.begin() + hi);
            std::vector<double> emb;
            const auto scores = forward_batch(ckpt, part, &emb, mode);
            for (int i = 0; i < part.count; ++i) {
                const size_t row = static_cast<size_t>(start + i);
                out.scores[all.trace_ids[row]] = scores[static_cast<size_t>(i)];
                out.embeddings.labels.push_back(all.labels[row]);
            }
            out.embeddings.data.insert(out.embeddings.data.end(), emb.begin(), emb.end());
        }
        for (size_t i = 0; i < all.trace_ids.size(); ++i) {
            out.trace_order.push_back(all.trace_ids[i]);
            out.labels[all.trace_ids[i]] = all.labels[i];
        }
        return out;
    }

    for (const auto& g : groups) {
        for (const auto& tr : g.traces) {
            double s = 1.0;
            if (opt.name == "tail") {
                s = tail_conf(tr.trajectory, opt.baselines.tail_length);
            } else if (opt.name == "bottom-group") {
                s = bottom_group_conf(tr.trajectory, opt.baselines.group_length,
                                      opt.baselines.bottom_fraction,
                                      opt.baselines.group_stride);
            } else if (opt.name == "uniform") {
                s = 1.0;
            } else {
                throw validation_error("unknown scorer: " + opt.name);
            }
            out.scores[tr.trace_id] = s;
            out.trace_order.push_back(tr.trace_id);
            out.labels[tr.trace_id] = tr.label;
        }
    }
    return out;
}

void add_scorer_flags(CLI::App* cmd, scorer_options& opt, const char* flag_name) {
    cmd->add_option(flag_name, opt.name, "Scorer: neuralconf|tail|bottom-group|uniform")
        ->check(CLI::IsMember({"neuralconf", "tail", "bottom-group", "uniform"}));
    cmd->add_option("--checkpoint", opt.checkpoint_path, "Estimator checkpoint (neuralconf)");
    cmd->add_option("--tail-length", opt.baselines.tail_length, "TailConf T")
        ->capture_default_str();
    cmd->add_option("--group-length", opt.baselines.group_length, "Bottom-10Conf G")
        ->capture_default_str();
    cmd->add_option("--bottom-frac", opt.baselines.bottom_fraction,
                    "Bottom-10Conf fraction f")
        ->capture_default_str();
    cmd->add_option("--group-stride", opt.baselines.group_stride, "Bottom-10Conf stride")
        ->capture_default_str();
}

void add_estimator_flags(CLI::App* cmd, estimator_config& cfg) {
    cmd->add_option("--lmax", cfg.l_max, "Aligned input length")->capture_default_str();
    cmd->add_option("--channels", cfg.channels, "Encoder channels")->capture_default_str();
    cmd->add_option("--blocks", cfg.blocks, "Residual blocks")->capture_default_str();
    cmd->add_option("--kernel", cfg.kernel, "Convolution kernel size (odd)")
        ->capture_default_str();
    cmd->add_option("--head-hidden", cfg.head_hidden, "Head hidden width")
        ->capture_default_str();
    cmd->add_option("--lr", cfg.learning_rate, "Learning rate")->capture_default_str();
    cmd->add_option("--batch", cfg.batch_size, "Batch size")->capture_default_str();
    cmd->add_option("--epochs", cfg.max_epochs, "Max epochs")->capture_default_str();
    cmd->add_option("--patience", cfg.patience, "Early-stop patience (epochs)")
        ->capture_default_str();
}

std::vector<question_group> load_dataset(const std::string& path,
                                         std::vector<std::string>* warnings = nullptr) {
    ingest_result res = ingest(path);
    for (const auto& w : res.warnings) {
        std::cerr << "warning: " << w << "\n";
    }
    if (warnings) *warnings = res.warnings;
    return std::move(res.groups);
}

align_mode align_from_flag(const std::string& s) {
    if (s == "tail") return align_mode::tail;
    if (s == "head") return align_mode::head;
    throw validation_error("alignment must be tail or head");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"traceconf: correctness signals from token-confidence trajectories"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Optional config file (flags take precedence)");

    bool serial = false;
    bool verbose = false;
    app.add_flag("--serial", serial, "Run compute kernels serially (no OpenMP)");
    app.add_flag("-v,--verbose", verbose, "Chatty progress output on stderr");

    // ---------------------------------------------------------------- ingest
    auto* cmd_ingest = app.add_subcommand("ingest", "Validate and summarize a trace file");
    std::string ingest_dataset, ingest_report;
    cmd_ingest->add_option("--dataset", ingest_dataset, "Trace JSONL file")->required();
    cmd_ingest->add_option("--report", ingest_report, "Write a JSON summary here");

    // ---------------------------------------------------------------- harvest
    auto* cmd_harvest =
        app.add_subcommand("harvest", "Collect traces from an OpenAI-compatible endpoint");
    harvest_config hcfg;
    cmd_harvest->add_option("--endpoint", hcfg.endpoint, "Base URL")->required();
    cmd_harvest->add_option("--model", hcfg.model, "Model name")->required();
    cmd_harvest->add_option("--questions", hcfg.questions_path, "Questions JSONL")
        ->required();
    cmd_harvest->add_option("--out", hcfg.output_path, "Output trace JSONL")->required();
    cmd_harvest->add_option("-k,--traces", hcfg.traces_per_question, "Traces per question K")
        ->capture_default_str();
    cmd_harvest->add_option("--top-k", hcfg.top_k, "Top-k logprobs per token")
        ->capture_default_str();
    cmd_harvest->add_option("--temperature", hcfg.temperature, "Sampling temperature")
        ->capture_default_str();
    cmd_harvest->add_option("--max-tokens", hcfg.max_tokens, "Completion length cap")
        ->capture_default_str();
    cmd_harvest->add_option("--concurrency", hcfg.concurrency, "In-flight request limit")
        ->capture_default_str();
    cmd_harvest->add_option("--retries", hcfg.max_retries, "Retries per request")
        ->capture_default_str();
    cmd_harvest->add_option("--backoff-ms", hcfg.backoff_ms, "Initial retry backoff")
        ->capture_default_str();
    cmd_harvest->add_flag("--chat", hcfg.chat, "Use /v1/chat/completions");
    cmd_harvest->add_option("--answer-pattern", hcfg.answer_pattern,
                            "Fallback answer regex (group 1)");
    cmd_harvest->add_option("--api-key-env", hcfg.api_key_env,
                            "Environment variable holding the API key")
        ->capture_default_str();

    // ---------------------------------------------------------------- synth
    auto* cmd_synth = app.add_subcommand("synth", "Generate a synthetic dataset");
    synthetic_spec synth;
    std::string synth_out, synth_signal = "none";
    cmd_synth->add_option("--out", synth_out, "Output trace JSONL")->required();
    cmd_synth->add_option("--questions", synth.n_questions, "Question count")
        ->capture_default_str();
    cmd_synth->add_option("--traces", synth.traces_per_question, "Traces per question")
        ->capture_default_str();
    cmd_synth->add_option("--correct-rate", synth.correct_rate, "P(trace correct)")
        ->capture_default_str();
    cmd_synth->add_option("--len-min", synth.len_min, "Min trace length")
        ->capture_default_str();
    cmd_synth->add_option("--len-max", synth.len_max, "Max trace length")
        ->capture_default_str();
    cmd_synth->add_option("--base-mean", synth.base_mean, "Base confidence mean")
        ->capture_default_str();
    cmd_synth->add_option("--noise", synth.noise_scale, "Noise sigma")->capture_default_str();
    cmd_synth
        ->add_option("--signal", synth_signal,
                     "Planted signal: none|mean-shift|tail-trend|tail-variance")
        ->capture_default_str();
    cmd_synth->add_option("--magnitude", synth.signal_magnitude, "Signal magnitude")
        ->capture_default_str();
    cmd_synth->add_option("--signal-window", synth.signal_window, "Planted tail length W")
        ->capture_default_str();
    cmd_synth->add_option("--seed", synth.seed, "RNG seed")->capture_default_str();

    // ---------------------------------------------------------------- train
    auto* cmd_train = app.add_subcommand("train", "Train the estimator on a trace file");
    estimator_config train_cfg;
    std::string train_dataset, train_out, train_align = "tail", train_log_path;
    split_fractions train_fracs;
    uint64_t train_split_seed = 0;
    cmd_train->add_option("--dataset", train_dataset, "Trace JSONL file")->required();
    cmd_train->add_option("--out", train_out, "Checkpoint output path")->required();
    add_estimator_flags(cmd_train, train_cfg);
    cmd_train->add_option("--seed", train_cfg.seed, "Training seed")->capture_default_str();
    cmd_train->add_option("--align", train_align, "Input alignment: tail|head")
        ->capture_default_str();
    cmd_train->add_option("--train-frac", train_fracs.train, "Train question fraction")
        ->capture_default_str();
    cmd_train->add_option("--val-frac", train_fracs.val, "Validation question fraction")
        ->capture_default_str();
    cmd_train->add_option("--test-frac", train_fracs.test, "Held-out question fraction")
        ->capture_default_str();
    cmd_train->add_option("--split-seed", train_split_seed, "Question split seed")
        ->capture_default_str();
    cmd_train->add_option("--log", train_log_path, "Training log CSV (default <out>.log.csv)");

    // ---------------------------------------------------------------- score
    auto* cmd_score = app.add_subcommand("score", "Score every trace in a file");
    scorer_options score_opt;
    std::string score_dataset, score_out, score_emb, score_hist;
    int score_bins = 30;
    bool score_standardize = false;
    cmd_score->add_option("--dataset", score_dataset, "Trace JSONL file")->required();
    cmd_score->add_option("--out", score_out, "Scores CSV output")->required();
    add_scorer_flags(cmd_score, score_opt, "--method");
    cmd_score->add_option("--embeddings", score_emb, "Embedding CSV output (neuralconf)");
    cmd_score->add_option("--histogram", score_hist, "Per-class histogram CSV output");
    cmd_score->add_option("--bins", score_bins, "Histogram bins")->capture_default_str();
    cmd_score->add_flag("--standardize-embeddings", score_standardize,
                        "Standardize embeddings before the DBI report");

    // ---------------------------------------------------------------- aggregate
    auto* cmd_agg = app.add_subcommand("aggregate", "Aggregate answers per question");
    scorer_options agg_opt;
    std::string agg_dataset, agg_out, agg_mode = "weighted";
    double agg_eta = 0.1;
    bool agg_filter_majority = false;
    cmd_agg->add_option("--dataset", agg_dataset, "Trace JSONL file")->required();
    cmd_agg->add_option("--out", agg_out, "Output directory")->required();
    add_scorer_flags(cmd_agg, agg_opt, "--scorer");
    cmd_agg->add_option("--mode", agg_mode, "weighted|majority|filtered")
        ->check(CLI::IsMember({"weighted", "majority", "filtered"}))
        ->capture_default_str();
    cmd_agg->add_option("--eta", agg_eta, "Keep fraction for filtered voting")
        ->capture_default_str();
    cmd_agg->add_flag("--filter-then-majority", agg_filter_majority,
                      "Unweighted vote after filtering");

    // ---------------------------------------------------------------- sweep
    auto* cmd_sweep = app.add_subcommand("sweep", "Run one of the analysis sweeps");
    sweep_spec sw;
    std::string sweep_kind_str = "length", sweep_dataset, sweep_out, sweep_policy = "retrain";
    std::vector<int> sweep_grid;
    std::vector<uint64_t> sweep_seeds;
    bool sweep_drop_short = false;
    cmd_sweep->add_option("--kind", sweep_kind_str, "length|position|head-tail|grouping")
        ->check(CLI::IsMember({"length", "position", "head-tail", "grouping"}))
        ->capture_default_str();
    cmd_sweep->add_option("--dataset", sweep_dataset, "Trace JSONL file")->required();
    cmd_sweep->add_option("--out", sweep_out, "Output directory")->required();
    cmd_sweep->add_option("--grid", sweep_grid, "Grid values (default 4..2048 doubling)")
        ->delimiter(',');
    cmd_sweep->add_option("--seeds", sweep_seeds, "Training seeds")->delimiter(',');
    cmd_sweep->add_option("--window-size", sw.window_size, "Sliding window size")
        ->capture_default_str();
    cmd_sweep->add_option("--stride", sw.window_stride, "Sliding window stride")
        ->capture_default_str();
    cmd_sweep->add_option("--split-seed", sw.split_seed, "Question split seed")
        ->capture_default_str();
    cmd_sweep->add_option("--train-frac", sw.fractions.train, "Train question fraction")
        ->capture_default_str();
    cmd_sweep->add_option("--val-frac", sw.fractions.val, "Validation question fraction")
        ->capture_default_str();
    cmd_sweep->add_option("--test-frac", sw.fractions.test, "Held-out question fraction")
        ->capture_default_str();
    cmd_sweep->add_option("--policy", sweep_policy, "retrain|fixed")
        ->check(CLI::IsMember({"retrain", "fixed"}))
        ->capture_default_str();
    cmd_sweep->add_option("--checkpoint", sw.fixed_checkpoint_path,
                          "Checkpoint for --policy fixed");
    cmd_sweep->add_option("--min-length", sw.min_length,
                          "Drop traces shorter than this before splitting")
        ->capture_default_str();
    cmd_sweep->add_flag("--tile", sw.grouping_tile, "Grouping sweep: stride = G");
    cmd_sweep->add_flag("--drop-short-windows", sweep_drop_short,
                        "Exclude traces shorter than the window");
    cmd_sweep->add_flag("--share-position-model", sw.share_position_model,
                        "Train one model over all window positions");
    cmd_sweep->add_option("--workers", sw.workers, "Concurrent sweep jobs")
        ->capture_default_str();
    add_estimator_flags(cmd_sweep, sw.base_config);
    cmd_sweep->add_option("--tail-length", sw.baselines.tail_length, "TailConf T")
        ->capture_default_str();
    cmd_sweep->add_option("--bottom-frac", sw.baselines.bottom_fraction,
                          "Bottom-10Conf fraction")
        ->capture_default_str();
    cmd_sweep->add_option("--group-stride", sw.baselines.group_stride,
                          "Bottom-10Conf stride")
        ->capture_default_str();

    // ---------------------------------------------------------------- report
    auto* cmd_report = app.add_subcommand("report", "Re-render a report from records.csv");
    std::string report_records, report_out;
    cmd_report->add_option("--records", report_records, "records.csv from a sweep")
        ->required();
    cmd_report->add_option("--out", report_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    const kernels::exec mode = serial ? kernels::exec::serial : kernels::exec::parallel;

    try {
        if (cmd_ingest->parsed()) {
            std::vector<std::string> warnings;
            const auto groups = load_dataset(ingest_dataset, &warnings);
            size_t traces = 0, correct = 0;
            int max_len = 0;
            for (const auto& g : groups) {
                for (const auto& tr : g.traces) {
                    ++traces;
                    correct += static_cast<size_t>(tr.label);
                    max_len = std::max(max_len, tr.trajectory.length());
                }
            }
            std::cout << "questions: " << groups.size() << "\ntraces: " << traces
                      << "\ncorrect: " << correct << "\nmax_length: " << max_len
                      << "\nwarnings: " << warnings.size() << "\n";
            if (!ingest_report.empty()) {
                json rep;
                rep["questions"] = groups.size();
                rep["traces"] = traces;
                rep["correct"] = correct;
                rep["max_length"] = max_len;
                rep["warnings"] = warnings;
                std::ofstream out(ingest_report, std::ios::binary);
                if (!out) throw io_error("cannot write report: " + ingest_report);
                out << rep.dump(2) << "\n";
                write_run_config(cmd_ingest, fs::path(ingest_report).string() + ".run.toml");
            }
            return 0;
        }

        if (cmd_harvest->parsed()) {
            const harvest_stats stats = harvest(hcfg);
            for (const auto& w : stats.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "requested: " << stats.requested << "\nwritten: " << stats.written
                      << "\nskipped: " << stats.skipped << "\nresumed: " << stats.resumed
                      << "\n";
            write_run_config(cmd_harvest, hcfg.output_path + ".run.toml");
            return 0;
        }

        if (cmd_synth->parsed()) {
            synth.signal = signal_type_from_string(synth_signal);
            const auto groups = generate_synthetic(synth);
            write_jsonl(groups, synth_out);
            write_run_config(cmd_synth, synth_out + ".run.toml");
            std::cout << "wrote " << groups.size() << " questions to " << synth_out << "\n";
            return 0;
        }

        if (cmd_train->parsed()) {
            train_cfg.alignment = align_from_flag(train_align);
            const auto groups = load_dataset(train_dataset);
            const auto assignment = split_questions(groups, train_fracs, train_split_seed);
            const auto train_groups = assignment.select(groups, split_id::train);
            const auto val_groups = assignment.select(groups, split_id::val);

            training_log log;
            const estimator_checkpoint ckpt =
                train(train_cfg, train_groups, val_groups, &log, mode);
            save_checkpoint(ckpt, train_out);
            if (verbose) {
                for (const auto& e : log.epochs) {
                    std::cerr << "epoch " << e.epoch << " loss " << format_double(e.train_loss)
                              << " val_auc " << format_double(e.val_auc) << "\n";
                }
            }

            const std::string log_path =
                train_log_path.empty() ? train_out + ".log.csv" : train_log_path;
            std::ofstream lout(log_path, std::ios::binary);
            if (!lout) throw io_error("cannot write training log: " + log_path);
            lout << "epoch,train_loss,val_auc\n";
            for (const auto& e : log.epochs) {
                lout << e.epoch << ',' << format_double(e.train_loss) << ','
                     << format_double(e.val_auc) << '\n';
            }
            write_run_config(cmd_train, train_out + ".run.toml");
            std::cout << "best_epoch: " << log.best_epoch
                      << "\nbest_val_auc: " << format_double(log.best_val_auc)
                      << "\ncheckpoint: " << train_out << "\n";
            return 0;
        }

        if (cmd_score->parsed()) {
            const auto groups = load_dataset(score_dataset);
            const scored_dataset scored = compute_scores(groups, score_opt, mode);

            std::ofstream out(score_out, std::ios::binary);
            if (!out) throw io_error("cannot write scores: " + score_out);
            out << "trace_id,question_id,label,score\n";
            std::map<std::string, std::string> trace_question;
            labeled_scores ls;
            for (const auto& g : groups) {
                for (const auto& tr : g.traces) trace_question[tr.trace_id] = g.question_id;
            }
            for (const auto& tid : scored.trace_order) {
                const double s = scored.scores.at(tid);
                const int y = scored.labels.at(tid);
                out << tid << ',' << trace_question.at(tid) << ',' << y << ','
                    << format_double(s) << '\n';
                ls.scores.push_back(s);
                ls.labels.push_back(y);
            }

            if (!score_emb.empty()) {
                if (!scored.has_embeddings) {
                    throw validation_error("--embeddings requires --method neuralconf");
                }
                std::ofstream eout(score_emb, std::ios::binary);
                if (!eout) throw io_error("cannot write embeddings: " + score_emb);
                const embedding_set& emb = score_standardize
                                               ? standardize_embeddings(scored.embeddings)
                                               : scored.embeddings;
                eout << "trace_id,label";
                for (size_t j = 0; j < emb.width; ++j) eout << ",h" << j;
                eout << '\n';
                for (size_t i = 0; i < emb.rows(); ++i) {
                    eout << scored.trace_order[i] << ',' << emb.labels[i];
                    for (size_t j = 0; j < emb.width; ++j) {
                        eout << ',' << format_double(emb.row(i)[j]);
                    }
                    eout << '\n';
                }
            }

            if (!score_hist.empty()) {
                const score_histogram hist = score_distribution(ls, score_bins);
                std::ofstream hout(score_hist, std::ios::binary);
                if (!hout) throw io_error("cannot write histogram: " + score_hist);
                hout << "bin_lo,bin_hi,count_neg,count_pos\n";
                const double width =
                    (hist.hi - hist.lo) / static_cast<double>(hist.counts_neg.size());
                for (size_t b = 0; b < hist.counts_neg.size(); ++b) {
                    hout << format_double(hist.lo + width * static_cast<double>(b)) << ','
                         << format_double(hist.lo + width * static_cast<double>(b + 1)) << ','
                         << hist.counts_neg[b] << ',' << hist.counts_pos[b] << '\n';
                }
                std::cout << "class_mean_neg: " << format_double(hist.mean_neg)
                          << "\nclass_mean_pos: " << format_double(hist.mean_pos) << "\n";
            }

            bool both_classes = false;
            {
                size_t pos = 0;
                for (const int y : ls.labels) pos += static_cast<size_t>(y);
                both_classes = pos > 0 && pos < ls.labels.size();
            }
            std::cout << "traces: " << ls.scores.size() << "\n";
            if (both_classes) {
                std::cout << "auc: " << format_double(auc(ls)) << "\n";
                if (scored.has_embeddings) {
                    const embedding_set& emb =
                        score_standardize ? standardize_embeddings(scored.embeddings)
                                          : scored.embeddings;
                    std::cout << "dbi: " << format_double(dbi(emb)) << "\n";
                }
            }
            write_run_config(cmd_score, score_out + ".run.toml");
            return 0;
        }

        if (cmd_agg->parsed()) {
            const auto groups = load_dataset(agg_dataset);
            const scored_dataset scored = compute_scores(groups, agg_opt, mode);
            const vote_mode mode_v = vote_mode_from_string(agg_mode);

            std::error_code ec;
            fs::create_directories(agg_out, ec);
            if (ec) throw io_error("cannot create output directory: " + agg_out);

            std::ofstream dout(fs::path(agg_out) / "decisions.csv", std::ios::binary);
            if (!dout) throw io_error("cannot write decisions.csv in " + agg_out);
            dout << "question_id,chosen,correct,n_traces,n_retained,top_weight\n";

            size_t hits = 0, with_gt = 0;
            for (const auto& g : groups) {
                vote_input input;
                for (const auto& tr : g.traces) {
                    input.entries.push_back(
                        {tr.trace_id, tr.answer, scored.scores.at(tr.trace_id)});
                }
                vote_result res;
                switch (mode_v) {
                    case vote_mode::weighted: res = weighted_vote(input); break;
                    case vote_mode::majority: res = majority_vote(input); break;
                    case vote_mode::filtered:
                        res = filtered_vote(input, agg_eta, agg_filter_majority);
                        break;
                }
                int correct = -1;
                if (g.has_ground_truth) {
                    ++with_gt;
                    correct = res.chosen == normalize_answer(g.ground_truth) ? 1 : 0;
                    hits += static_cast<size_t>(correct);
                }
                dout << g.question_id << ',' << res.chosen << ','
                     << (correct < 0 ? std::string() : std::to_string(correct)) << ','
                     << g.traces.size() << ',' << res.retained.size() << ','
                     << format_double(res.tallies.front().weight) << '\n';
            }

            json summary;
            summary["scorer"] = agg_opt.name;
            summary["mode"] = agg_mode;
            if (mode_v == vote_mode::filtered) {
                summary["eta"] = agg_eta;
                summary["filter_then_majority"] = agg_filter_majority;
            }
            summary["questions"] = groups.size();
            if (with_gt == groups.size()) {
                summary["accuracy"] =
                    static_cast<double>(hits) / static_cast<double>(groups.size());
            }
            std::ofstream sout(fs::path(agg_out) / "summary.json", std::ios::binary);
            sout << summary.dump(2) << "\n";
            write_run_config(cmd_agg, (fs::path(agg_out) / "run_config.toml").string());
            if (summary.contains("accuracy")) {
                std::cout << "accuracy: " << format_double(summary["accuracy"].get<double>())
                          << "\n";
            }
            return 0;
        }

        if (cmd_sweep->parsed()) {
            sw.kind = sweep_kind_from_string(sweep_kind_str);
            if (!sweep_grid.empty()) sw.grid = sweep_grid;
            if (!sweep_seeds.empty()) sw.seeds = sweep_seeds;
            sw.include_short_windows = !sweep_drop_short;
            sw.retrain_per_point = sweep_policy == "retrain";
            const auto groups = load_dataset(sweep_dataset);
            const sweep_result result = run_sweep(sw, groups, mode);
            if (verbose) {
                for (const auto& r : result.records) {
                    std::cerr << r.method << " grid " << format_double(r.grid_value)
                              << " seed " << r.seed << " auc " << format_double(r.auc_value)
                              << "\n";
                }
            }
            emit_report(result, sweep_out);
            write_run_config(cmd_sweep, (fs::path(sweep_out) / "run_config.toml").string());
            for (const auto& w : result.warnings) std::cerr << "warning: " << w << "\n";
            std::cout << "records: " << result.records.size() << "\nreport: " << sweep_out
                      << "\n";
            return 0;
        }

        if (cmd_report->parsed()) {
            const sweep_result result = load_records_csv(report_records);
            emit_report(result, report_out);
            write_run_config(cmd_report, (fs::path(report_out) / "run_config.toml").string());
            std::cout << "report: " << report_out << "\n";
            return 0;
        }
    } catch (const io_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
