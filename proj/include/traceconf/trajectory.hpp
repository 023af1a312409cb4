#pragma once

#include <cstdint>
#include <vector>

namespace traceconf {

// Top-k token probabilities at one decoding step, sorted non-increasing.
struct topk_record {
    std::vector<double> probs;

    int k() const { return static_cast<int>(probs.size()); }

    // Validates: non-empty, each entry in [0,1], non-increasing, sum <= 1 + 1e-6.
    static topk_record from_probs(std::vector<double> probs);
    // exp() of each logprob, sorted descending, then validated as above.
    static topk_record from_logprobs(const std::vector<double>& logprobs);
};

// Per-token confidence values of one trace, in decoding order.
struct confidence_trajectory {
    std::vector<double> values;

    int length() const { return static_cast<int>(values.size()); }
};

enum class align_mode { tail, head, window };

// Fixed-length view of a trajectory. Pad positions carry value exactly 0
// and mask 0; everything downstream pools over mask-1 positions only.
struct aligned_trajectory {
    std::vector<double> values;
    std::vector<uint8_t> mask;
    align_mode origin = align_mode::tail;
    // window origin only: distance from the window centre to the sequence end
    double window_center_distance = 0.0;

    int size() const { return static_cast<int>(values.size()); }
    int valid_count() const;
};

// c = -(1/k) * sum_j log(max(P_j, 1e-12))
double token_confidence(const topk_record& record);

confidence_trajectory build_trajectory(const std::vector<topk_record>& records);

// Keep the final min(L, l_max) values, left-pad with zeros.
aligned_trajectory tail_align(const confidence_trajectory& traj, int l_max);

// Keep the first min(L, l_max) values, right-pad with zeros.
aligned_trajectory head_align(const confidence_trajectory& traj, int l_max);

// End-anchored sliding windows: the last window covers the final `size`
// tokens, each earlier one starts `stride` tokens before it, stopping when
// a window would extend past position 0. Emitted end-first, so the centre
// distances are size/2, size/2 + stride, ... A trace shorter than `size`
// yields one fully left-padded window unless include_short is false.
std::vector<aligned_trajectory> sliding_windows(const confidence_trajectory& traj,
                                                int size, int stride,
                                                bool include_short = true);

}  // namespace traceconf
