#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"
#include "traceconf/analysis.hpp"
#include "traceconf/errors.hpp"

namespace traceconf {

using nlohmann::json;

std::string format_double(double v) {
    if (std::isnan(v)) return "";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

double parse_double_field(const std::string& s) {
    if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc{}) {
        throw parse_error("records.csv: bad number \"" + s + "\"");
    }
    return v;
}

struct stat_acc {
    std::vector<double> values;

    void add(double v) {
        if (!std::isnan(v)) values.push_back(v);
    }
    double mean() const {
        if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
        double s = 0.0;
        for (const double v : values) s += v;
        return s / static_cast<double>(values.size());
    }
    // sample s.d., n-1 denominator; 0 for a single value
    double sd() const {
        if (values.empty()) return std::numeric_limits<double>::quiet_NaN();
        if (values.size() == 1) return 0.0;
        const double m = mean();
        double s = 0.0;
        for (const double v : values) s += (v - m) * (v - m);
        return std::sqrt(s / static_cast<double>(values.size() - 1));
    }
};

}  // namespace

std::vector<summary_row> summarize(const sweep_result& result) {
    std::map<std::pair<std::string, double>, std::array<stat_acc, 3>> acc;
    std::map<std::pair<std::string, double>, int> runs;
    for (const auto& r : result.records) {
        const auto key = std::make_pair(r.method, r.grid_value);
        acc[key][0].add(r.auc_value);
        acc[key][1].add(r.dbi_value);
        acc[key][2].add(r.threshold_acc);
        runs[key] += 1;
    }
    std::vector<summary_row> rows;
    rows.reserve(acc.size());
    for (const auto& [key, stats] : acc) {
        summary_row row;
        row.method = key.first;
        row.grid_value = key.second;
        row.n_runs = runs[key];
        row.auc_mean = stats[0].mean();
        row.auc_sd = stats[0].sd();
        row.dbi_mean = stats[1].mean();
        row.dbi_sd = stats[1].sd();
        row.acc_mean = stats[2].mean();
        row.acc_sd = stats[2].sd();
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

const char* grid_label(sweep_kind k) {
    switch (k) {
        case sweep_kind::length: return "l_max";
        case sweep_kind::window_position: return "window centre distance from end";
        case sweep_kind::head_tail: return "l_max";
        case sweep_kind::grouping: return "grouping length";
    }
    return "grid";
}

std::vector<plot_series> build_series(const std::vector<summary_row>& rows, bool use_dbi) {
    std::map<std::string, plot_series> by_method;
    for (const auto& r : rows) {
        const double mean = use_dbi ? r.dbi_mean : r.auc_mean;
        const double sd = use_dbi ? r.dbi_sd : r.auc_sd;
        if (std::isnan(mean)) continue;
        auto& s = by_method[r.method];
        s.name = r.method;
        s.points.push_back({r.grid_value, mean, std::isnan(sd) ? 0.0 : sd});
    }
    std::vector<plot_series> out;
    for (auto& [name, s] : by_method) {
        (void)name;
        std::sort(s.points.begin(), s.points.end(),
                  [](const series_point& a, const series_point& b) { return a.x < b.x; });
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace

void emit_report(const sweep_result& result, const std::string& out_dir) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw io_error("cannot create output directory: " + out_dir);

    // raw per-run records
    {
        std::ofstream out(fs::path(out_dir) / "records.csv", std::ios::binary);
        if (!out) throw io_error("cannot write records.csv in " + out_dir);
        out << "kind,method,grid_value,seed,auc,dbi,threshold_accuracy,n_test,"
               "grid_exceeds_lengths\n";
        for (const auto& r : result.records) {
            out << to_string(result.kind) << ',' << r.method << ','
                << format_double(r.grid_value) << ','
                << (r.seed < 0 ? std::string() : std::to_string(r.seed)) << ','
                << format_double(r.auc_value) << ',' << format_double(r.dbi_value) << ','
                << format_double(r.threshold_acc) << ',' << r.n_test << ','
                << (r.grid_exceeds_lengths ? 1 : 0) << '\n';
        }
    }

    const auto rows = summarize(result);

    // per-grid-point summary
    {
        std::ofstream out(fs::path(out_dir) / "summary.csv", std::ios::binary);
        if (!out) throw io_error("cannot write summary.csv in " + out_dir);
        out << "method,grid_value,n_runs,auc_mean,auc_sd,dbi_mean,dbi_sd,"
               "threshold_accuracy_mean,threshold_accuracy_sd\n";
        for (const auto& r : rows) {
            out << r.method << ',' << format_double(r.grid_value) << ',' << r.n_runs << ','
                << format_double(r.auc_mean) << ',' << format_double(r.auc_sd) << ','
                << format_double(r.dbi_mean) << ',' << format_double(r.dbi_sd) << ','
                << format_double(r.acc_mean) << ',' << format_double(r.acc_sd) << '\n';
        }
    }

    // machine-readable bundle
    {
        json summary;
        summary["kind"] = to_string(result.kind);
        summary["record_count"] = result.records.size();
        summary["warnings"] = result.warnings;
        json jrows = json::array();
        for (const auto& r : rows) {
            json jr;
            jr["method"] = r.method;
            jr["grid_value"] = r.grid_value;
            jr["n_runs"] = r.n_runs;
            auto put = [&jr](const char* key, double v) {
                if (std::isnan(v)) {
                    jr[key] = nullptr;
                } else {
                    jr[key] = v;
                }
            };
            put("auc_mean", r.auc_mean);
            put("auc_sd", r.auc_sd);
            put("dbi_mean", r.dbi_mean);
            put("dbi_sd", r.dbi_sd);
            put("threshold_accuracy_mean", r.acc_mean);
            put("threshold_accuracy_sd", r.acc_sd);
            jrows.push_back(std::move(jr));
        }
        summary["summary"] = jrows;
        std::ofstream out(fs::path(out_dir) / "summary.json", std::ios::binary);
        if (!out) throw io_error("cannot write summary.json in " + out_dir);
        out << summary.dump(2) << "\n";
    }

    const std::string xlab = grid_label(result.kind);
    svg_line_plot((fs::path(out_dir) / "plot_auc.svg").string(), "trace-level AUC", xlab,
                  "AUC", build_series(rows, false));
    svg_line_plot((fs::path(out_dir) / "plot_dbi.svg").string(), "Davies-Bouldin index", xlab,
                  "DBI", build_series(rows, true));
}

sweep_result load_records_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open records file: " + path);

    std::string line;
    if (!std::getline(in, line)) throw parse_error("records.csv: empty file");

    sweep_result result;
    bool kind_set = false;
    long line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::stringstream ss(line);
        std::string field;
        while (std::getline(ss, field, ',')) fields.push_back(field);
        while (fields.size() < 9) fields.emplace_back();
        if (fields.size() != 9) {
            throw parse_error("records.csv line " + std::to_string(line_no) +
                              ": expected 9 fields");
        }
        if (!kind_set) {
            result.kind = sweep_kind_from_string(fields[0]);
            kind_set = true;
        }
        sweep_record r;
        r.method = fields[1];
        r.grid_value = parse_double_field(fields[2]);
        r.seed = fields[3].empty() ? -1 : std::stol(fields[3]);
        r.auc_value = parse_double_field(fields[4]);
        r.dbi_value = parse_double_field(fields[5]);
        r.threshold_acc = parse_double_field(fields[6]);
        r.n_test = fields[7].empty() ? 0 : std::stol(fields[7]);
        r.grid_exceeds_lengths = fields[8] == "1";
        result.records.push_back(std::move(r));
    }
    return result;
}

// ---------------------------------------------------------------------------
// SVG plot
// ---------------------------------------------------------------------------

namespace {

std::string fmt_coord(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

std::string fmt_tick(double v) {
    char buf[32];
    if (v == std::floor(v) && std::abs(v) < 1e9) {
        std::snprintf(buf, sizeof(buf), "%.0f", v);
    } else {
        std::snprintf(buf, sizeof(buf), "%.3g", v);
    }
    return buf;
}

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

}  // namespace

plot_axes svg_line_plot(const std::string& path, const std::string& title,
                        const std::string& x_label, const std::string& y_label,
                        const std::vector<plot_series>& series) {
    constexpr double width = 640, height = 420;
    constexpr double ml = 64, mr = 24, mt = 40, mb = 52;

    plot_axes axes;
    bool any = false;
    double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
    for (const auto& s : series) {
        for (const auto& p : s.points) {
            if (!any) {
                x_min = x_max = p.x;
                y_min = p.y - p.err;
                y_max = p.y + p.err;
                any = true;
            } else {
                x_min = std::min(x_min, p.x);
                x_max = std::max(x_max, p.x);
                y_min = std::min(y_min, p.y - p.err);
                y_max = std::max(y_max, p.y + p.err);
            }
        }
    }
    if (!any) {
        x_min = 0;
        x_max = 1;
        y_min = 0;
        y_max = 1;
    }
    axes.log_x = any && x_min > 0.0 && x_max / x_min >= 8.0;
    if (x_min == x_max) {
        x_min -= 0.5;
        x_max += 0.5;
    }
    if (y_min == y_max) {
        y_min -= 0.05;
        y_max += 0.05;
    }
    const double y_pad = (y_max - y_min) * 0.06;
    y_min -= y_pad;
    y_max += y_pad;
    axes.x_lo = x_min;
    axes.x_hi = x_max;
    axes.y_lo = y_min;
    axes.y_hi = y_max;

    auto tx = [&](double x) {
        double t;
        if (axes.log_x) {
            t = (std::log2(x) - std::log2(x_min)) / (std::log2(x_max) - std::log2(x_min));
        } else {
            t = (x - x_min) / (x_max - x_min);
        }
        return ml + t * (width - ml - mr);
    };
    auto ty = [&](double y) {
        const double t = (y - y_min) / (y_max - y_min);
        return height - mb - t * (height - mb - mt);
    };

    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot write plot: " + path);
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\""
        << height << "\" viewBox=\"0 0 " << width << " " << height << "\">\n";
    out << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    out << "<text x=\"" << fmt_coord(width / 2) << "\" y=\"22\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"15\">" << title << "</text>\n";

    // frame
    out << "<rect x=\"" << fmt_coord(ml) << "\" y=\"" << fmt_coord(mt) << "\" width=\""
        << fmt_coord(width - ml - mr) << "\" height=\"" << fmt_coord(height - mt - mb)
        << "\" fill=\"none\" stroke=\"#333\"/>\n";

    // x ticks: series x positions (unique), capped at 12
    std::vector<double> xticks;
    for (const auto& s : series) {
        for (const auto& p : s.points) xticks.push_back(p.x);
    }
    std::sort(xticks.begin(), xticks.end());
    xticks.erase(std::unique(xticks.begin(), xticks.end()), xticks.end());
    if (xticks.size() > 12) {
        std::vector<double> thin;
        const size_t step = (xticks.size() + 11) / 12;
        for (size_t i = 0; i < xticks.size(); i += step) thin.push_back(xticks[i]);
        xticks = thin;
    }
    if (xticks.empty()) xticks = {x_min, x_max};
    for (const double x : xticks) {
        out << "<line x1=\"" << fmt_coord(tx(x)) << "\" y1=\"" << fmt_coord(height - mb)
            << "\" x2=\"" << fmt_coord(tx(x)) << "\" y2=\"" << fmt_coord(height - mb + 5)
            << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << fmt_coord(tx(x)) << "\" y=\"" << fmt_coord(height - mb + 18)
            << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_tick(x) << "</text>\n";
    }

    for (int i = 0; i <= 4; ++i) {
        const double y = y_min + (y_max - y_min) * i / 4.0;
        out << "<line x1=\"" << fmt_coord(ml - 5) << "\" y1=\"" << fmt_coord(ty(y))
            << "\" x2=\"" << fmt_coord(ml) << "\" y2=\"" << fmt_coord(ty(y))
            << "\" stroke=\"#333\"/>\n";
        out << "<text x=\"" << fmt_coord(ml - 8) << "\" y=\"" << fmt_coord(ty(y) + 4)
            << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">"
            << fmt_tick(y) << "</text>\n";
    }

    out << "<text x=\"" << fmt_coord((ml + width - mr) / 2) << "\" y=\""
        << fmt_coord(height - 12)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << x_label
        << (axes.log_x ? " (log scale)" : "") << "</text>\n";
    out << "<text x=\"16\" y=\"" << fmt_coord((mt + height - mb) / 2)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\" "
        << "transform=\"rotate(-90 16 " << fmt_coord((mt + height - mb) / 2) << ")\">"
        << y_label << "</text>\n";

    int color_idx = 0;
    double legend_y = mt + 14;
    for (const auto& s : series) {
        const char* color = kPalette[color_idx % 6];
        ++color_idx;

        for (const auto& p : s.points) {
            if (p.err > 0.0) {
                out << "<line x1=\"" << fmt_coord(tx(p.x)) << "\" y1=\""
                    << fmt_coord(ty(p.y - p.err)) << "\" x2=\"" << fmt_coord(tx(p.x))
                    << "\" y2=\"" << fmt_coord(ty(p.y + p.err)) << "\" stroke=\"" << color
                    << "\" stroke-width=\"1\"/>\n";
            }
        }
        out << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"1.5\" points=\"";
        for (const auto& p : s.points) {
            out << fmt_coord(tx(p.x)) << ',' << fmt_coord(ty(p.y)) << ' ';
        }
        out << "\"/>\n";
        for (const auto& p : s.points) {
            out << "<circle cx=\"" << fmt_coord(tx(p.x)) << "\" cy=\"" << fmt_coord(ty(p.y))
                << "\" r=\"2.5\" fill=\"" << color << "\"/>\n";
        }

        out << "<rect x=\"" << fmt_coord(ml + 10) << "\" y=\"" << fmt_coord(legend_y - 8)
            << "\" width=\"10\" height=\"10\" fill=\"" << color << "\"/>\n";
        out << "<text x=\"" << fmt_coord(ml + 24) << "\" y=\"" << fmt_coord(legend_y + 1)
            << "\" font-family=\"sans-serif\" font-size=\"11\">" << s.name << "</text>\n";
        legend_y += 16;
    }

    out << "</svg>\n";
    if (!out) throw io_error("failed writing plot: " + path);
    return axes;
}

}  // namespace traceconf
