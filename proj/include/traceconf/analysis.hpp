#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "traceconf/baselines.hpp"
#include "traceconf/dataset.hpp"
#include "traceconf/estimator.hpp"

namespace traceconf {

enum class sweep_kind { length, window_position, head_tail, grouping };

sweep_kind sweep_kind_from_string(const std::string& s);
std::string to_string(sweep_kind k);

struct sweep_spec {
    sweep_kind kind = sweep_kind::length;
    std::vector<int> grid = {4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048};
    int window_size = 64;
    int window_stride = 32;
    std::vector<uint64_t> seeds = {0, 1, 2, 3, 4};
    split_fractions fractions;
    uint64_t split_seed = 0;
    estimator_config base_config;     // l_max / seed / alignment set per job
    bool retrain_per_point = true;    // false: evaluate fixed_checkpoint_path instead
    std::string fixed_checkpoint_path;
    int min_length = 0;               // drop traces shorter than this before splitting
    baseline_config baselines;
    bool grouping_tile = false;       // stride = G instead of the configured stride
    bool include_short_windows = true;
    bool share_position_model = false;  // one model over all windows vs per bucket
    int workers = 1;

    void validate() const;
};

struct sweep_record {
    std::string method;  // neuralconf | tailconf | bottom10conf | neuralconf_head | ...
    double grid_value = 0.0;
    long seed = -1;              // -1 for deterministic scorers
    double auc_value = 0.0;      // NaN when not applicable / skipped
    double dbi_value = 0.0;
    double threshold_acc = 0.0;
    long n_test = 0;
    bool grid_exceeds_lengths = false;
};

struct sweep_result {
    sweep_kind kind = sweep_kind::length;
    std::vector<sweep_record> records;
    std::vector<std::string> warnings;
};

// Runs the (grid point, seed) jobs, concurrently up to spec.workers, and
// merges records in job order, so output is independent of scheduling.
sweep_result run_sweep(const sweep_spec& spec, const std::vector<question_group>& dataset,
                       kernels::exec mode = kernels::exec::parallel);

// --------------------------------------------------------------------------
// report bundle
// --------------------------------------------------------------------------

struct summary_row {
    std::string method;
    double grid_value = 0.0;
    int n_runs = 0;
    double auc_mean = 0.0, auc_sd = 0.0;
    double dbi_mean = 0.0, dbi_sd = 0.0;
    double acc_mean = 0.0, acc_sd = 0.0;
};

// Mean and sample s.d. (n-1) per (method, grid point); NaN records excluded.
std::vector<summary_row> summarize(const sweep_result& result);

// Writes records.csv, summary.csv, summary.json, plot_auc.svg, plot_dbi.svg.
// Deterministic bytes for identical input.
void emit_report(const sweep_result& result, const std::string& out_dir);

// Re-load a records.csv written by emit_report (used by the report command).
sweep_result load_records_csv(const std::string& path);

// Minimal SVG line plot with error whiskers; returns the axis ranges used.
struct series_point {
    double x = 0.0, y = 0.0, err = 0.0;
};
struct plot_series {
    std::string name;
    std::vector<series_point> points;
};
struct plot_axes {
    double x_lo = 0.0, x_hi = 0.0, y_lo = 0.0, y_hi = 0.0;
    bool log_x = false;
};
plot_axes svg_line_plot(const std::string& path, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        const std::vector<plot_series>& series);

// Shortest round-trip decimal form (to_chars); used for all CSV/JSON numbers.
std::string format_double(double v);

}  // namespace traceconf
