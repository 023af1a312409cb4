#pragma once

#include "traceconf/trajectory.hpp"

namespace traceconf {

// DeepConf-style hand-crafted scorer settings.
struct baseline_config {
    int tail_length = 2048;       // TailConf T
    int group_length = 1024;      // Bottom-10Conf grouping length G
    double bottom_fraction = 0.10;
    int group_stride = 1;         // 1 = fully overlapping windows
};

// Mean of the last min(L, tail_length) confidence values.
double tail_conf(const confidence_trajectory& traj, int tail_length);

// Sliding-group means of length G (stride given) over the full trajectory;
// score = mean of the ceil(f * n_groups) smallest group means. A trace
// shorter than G contributes a single whole-trace group.
double bottom_group_conf(const confidence_trajectory& traj, int group_length,
                         double bottom_fraction, int stride);

}  // namespace traceconf
