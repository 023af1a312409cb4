#include "traceconf/trajectory.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "traceconf/errors.hpp"

namespace traceconf {

namespace {
constexpr double kProbEps = 1e-12;  // clamp before log, keeps degenerate records finite
}

topk_record topk_record::from_probs(std::vector<double> probs) {
    if (probs.empty()) {
        throw validation_error("topk_record: empty probability list");
    }
    double sum = 0.0;
    for (size_t j = 0; j < probs.size(); ++j) {
        const double p = probs[j];
        if (!std::isfinite(p) || p < 0.0) {
            throw validation_error("topk_record: probability out of range at index " +
                                   std::to_string(j));
        }
        if (p > 1.0 + 1e-9) {
            throw validation_error("topk_record: probability > 1 at index " +
                                   std::to_string(j));
        }
        if (j > 0 && probs[j] > probs[j - 1]) {
            throw validation_error("topk_record: probabilities not sorted non-increasing");
        }
        sum += p;
    }
    if (sum > 1.0 + 1e-6) {
        throw validation_error("topk_record: probabilities sum to " + std::to_string(sum));
    }
    topk_record rec;
    rec.probs = std::move(probs);
    return rec;
}

topk_record topk_record::from_logprobs(const std::vector<double>& logprobs) {
    std::vector<double> probs;
    probs.reserve(logprobs.size());
    for (const double lp : logprobs) {
        if (std::isnan(lp) || lp > 1e-6) {
            throw validation_error("topk_record: logprob must be <= 0");
        }
        probs.push_back(std::exp(std::min(lp, 0.0)));  // exp(-inf) == 0 is fine
    }
    std::sort(probs.begin(), probs.end(), std::greater<double>());
    return from_probs(std::move(probs));
}

double token_confidence(const topk_record& record) {
    if (record.probs.empty()) {
        throw validation_error("token_confidence: empty record");
    }
    double sum_log = 0.0;
    for (const double p : record.probs) {
        if (p < 0.0) {
            throw validation_error("token_confidence: negative probability");
        }
        sum_log += std::log(std::max(p, kProbEps));
    }
    return -sum_log / static_cast<double>(record.probs.size());
}

confidence_trajectory build_trajectory(const std::vector<topk_record>& records) {
    if (records.empty()) {
        throw validation_error("build_trajectory: empty record sequence");
    }
    confidence_trajectory traj;
    traj.values.reserve(records.size());
    for (const auto& rec : records) {
        traj.values.push_back(token_confidence(rec));
    }
    return traj;
}

int aligned_trajectory::valid_count() const {
    int n = 0;
    for (const uint8_t m : mask) n += m;
    return n;
}

aligned_trajectory tail_align(const confidence_trajectory& traj, int l_max) {
    if (l_max < 1) {
        throw validation_error("tail_align: l_max must be >= 1");
    }
    const int len = traj.length();
    const int keep = std::min(len, l_max);
    const int pad = l_max - keep;

    aligned_trajectory out;
    out.origin = align_mode::tail;
    out.values.assign(static_cast<size_t>(l_max), 0.0);
    out.mask.assign(static_cast<size_t>(l_max), 0);
    for (int i = 0; i < keep; ++i) {
        out.values[static_cast<size_t>(pad + i)] = traj.values[static_cast<size_t>(len - keep + i)];
        out.mask[static_cast<size_t>(pad + i)] = 1;
    }
    return out;
}

aligned_trajectory head_align(const confidence_trajectory& traj, int l_max) {
    if (l_max < 1) {
        throw validation_error("head_align: l_max must be >= 1");
    }
    const int keep = std::min(traj.length(), l_max);

    aligned_trajectory out;
    out.origin = align_mode::head;
    out.values.assign(static_cast<size_t>(l_max), 0.0);
    out.mask.assign(static_cast<size_t>(l_max), 0);
    for (int i = 0; i < keep; ++i) {
        out.values[static_cast<size_t>(i)] = traj.values[static_cast<size_t>(i)];
        out.mask[static_cast<size_t>(i)] = 1;
    }
    return out;
}

std::vector<aligned_trajectory> sliding_windows(const confidence_trajectory& traj,
                                                int size, int stride, bool include_short) {
    if (size < 1 || stride < 1) {
        throw validation_error("sliding_windows: size and stride must be >= 1");
    }
    const int len = traj.length();
    std::vector<aligned_trajectory> out;

    if (len < size) {
        if (!include_short) return out;
        aligned_trajectory w = tail_align(traj, size);
        w.origin = align_mode::window;
        w.window_center_distance = size / 2.0;
        out.push_back(std::move(w));
        return out;
    }

    for (int start = len - size; start >= 0; start -= stride) {
        aligned_trajectory w;
        w.origin = align_mode::window;
        w.window_center_distance = static_cast<double>(len) - (start + size / 2.0);
        w.values.assign(traj.values.begin() + start, traj.values.begin() + start + size);
        w.mask.assign(static_cast<size_t>(size), 1);
        out.push_back(std::move(w));
    }
    return out;
}

}  // namespace traceconf
