#include "traceconf/baselines.hpp"

#include <algorithm>
#include <cmath>

#include "traceconf/errors.hpp"

namespace traceconf {

double tail_conf(const confidence_trajectory& traj, int tail_length) {
    if (tail_length < 1) {
        throw validation_error("tail_conf: tail_length must be >= 1");
    }
    const int len = traj.length();
    if (len == 0) {
        throw validation_error("tail_conf: empty trajectory");
    }
    const int keep = std::min(len, tail_length);
    double sum = 0.0;
    for (int i = len - keep; i < len; ++i) {
        sum += traj.values[static_cast<size_t>(i)];
    }
    return sum / static_cast<double>(keep);
}

double bottom_group_conf(const confidence_trajectory& traj, int group_length,
                         double bottom_fraction, int stride) {
    if (group_length < 1 || stride < 1) {
        throw validation_error("bottom_group_conf: group_length and stride must be >= 1");
    }
    if (!(bottom_fraction > 0.0 && bottom_fraction <= 1.0)) {
        throw validation_error("bottom_group_conf: bottom_fraction must be in (0, 1]");
    }
    const int len = traj.length();
    if (len == 0) {
        throw validation_error("bottom_group_conf: empty trajectory");
    }

    std::vector<double> groups;
    if (len < group_length) {
        double sum = 0.0;
        for (const double v : traj.values) sum += v;
        groups.push_back(sum / static_cast<double>(len));
    } else {
        for (int start = 0; start + group_length <= len; start += stride) {
            double sum = 0.0;
            for (int i = start; i < start + group_length; ++i) {
                sum += traj.values[static_cast<size_t>(i)];
            }
            groups.push_back(sum / static_cast<double>(group_length));
        }
    }

    std::sort(groups.begin(), groups.end());
    const size_t n_groups = groups.size();
    size_t take = static_cast<size_t>(
        std::ceil(bottom_fraction * static_cast<double>(n_groups) - 1e-12));
    take = std::clamp<size_t>(take, 1, n_groups);

    double sum = 0.0;
    for (size_t i = 0; i < take; ++i) sum += groups[i];
    return sum / static_cast<double>(take);
}

}  // namespace traceconf
