#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "traceconf/dataset.hpp"
#include "traceconf/kernels.hpp"
#include "traceconf/trajectory.hpp"

namespace traceconf {

// Architecture + training hyperparameters. Serialized into checkpoints.
struct estimator_config {
    int l_max = 2048;
    int channels = 32;      // stem / block width C
    int blocks = 2;         // residual blocks B
    int kernel = 5;         // odd, symmetric same-padding
    int head_hidden = 32;
    double learning_rate = 1e-3;
    int batch_size = 64;
    int max_epochs = 100;
    int patience = 10;
    uint64_t seed = 0;
    align_mode alignment = align_mode::tail;

    void validate() const;
};

struct tensor_spec {
    std::string name;
    std::vector<int> shape;
    size_t offset = 0;
    size_t size = 0;
};

struct param_layout {
    std::vector<tensor_spec> tensors;
    size_t total = 0;

    const tensor_spec& find(const std::string& name) const;
};

// Parameter layout is a pure function of the architecture.
param_layout make_layout(const estimator_config& config);

struct estimator_checkpoint {
    int format_version = 1;
    estimator_config config;
    param_layout layout;
    std::vector<double> params;  // flat, layout order
    double norm_mean = 0.0;      // input standardization over unmasked train values
    double norm_std = 1.0;
};

struct trace_score {
    std::string trace_id;
    double score = 0.5;             // p in (0,1)
    std::vector<double> embedding;  // h, width C
};

// Fixed-size batch of aligned trajectories, row-major [n][l_max].
struct aligned_batch {
    int count = 0;
    int l_max = 0;
    std::vector<double> values;
    std::vector<uint8_t> mask;

    void append(const aligned_trajectory& a);
};

struct epoch_stat {
    int epoch = 0;
    double train_loss = 0.0;
    double val_auc = 0.0;
};

struct training_log {
    std::vector<epoch_stat> epochs;
    int best_epoch = -1;
    double best_val_auc = 0.0;
    double weight_pos = 1.0;
    double weight_neg = 1.0;
};

// Aligned examples with labels; question ids kept for the leakage check.
struct labeled_batch {
    aligned_batch batch;
    std::vector<int> labels;
    std::vector<std::string> question_ids;
    std::vector<std::string> trace_ids;
};

estimator_checkpoint init_estimator(const estimator_config& config);

// Full readout: standardize unmasked values -> stem conv -> residual blocks
// (re-masked after every conv) -> masked mean pool -> 2-layer head -> sigmoid.
trace_score forward(const estimator_checkpoint& ckpt, const aligned_trajectory& input,
                    kernels::exec mode = kernels::exec::parallel);

// Batched forward; returns scores, optionally fills row-major embeddings.
std::vector<double> forward_batch(const estimator_checkpoint& ckpt, const aligned_batch& batch,
                                  std::vector<double>* embeddings = nullptr,
                                  kernels::exec mode = kernels::exec::parallel);

// Mean over the batch of -[w_pos*y*log p + w_neg*(1-y)*log(1-p)],
// p clamped to [1e-7, 1-1e-7].
double weighted_bce(const std::vector<double>& scores, const std::vector<int>& labels,
                    double w_pos, double w_neg);

// Analytic gradient of weighted_bce(forward_batch(...)) w.r.t. every
// parameter, flat in layout order. Returns the loss.
double backward(const estimator_checkpoint& ckpt, const aligned_batch& batch,
                const std::vector<int>& labels, double w_pos, double w_neg,
                std::vector<double>& grad, kernels::exec mode = kernels::exec::parallel);

// Adam on shuffled mini-batches, class weights from inverse train-class
// frequency (mean 1), early stopping and model selection on validation AUC.
// Train and val must not share a question id. Deterministic given the seed.
estimator_checkpoint train(const estimator_config& config,
                           const std::vector<question_group>& train_groups,
                           const std::vector<question_group>& val_groups,
                           training_log* log = nullptr,
                           kernels::exec mode = kernels::exec::parallel);

// Same loop on pre-aligned data (used by the sliding-window analysis).
estimator_checkpoint train_aligned(const estimator_config& config, const labeled_batch& train,
                                   const labeled_batch& val, training_log* log = nullptr,
                                   kernels::exec mode = kernels::exec::parallel);

// Builds aligned examples from groups per the config's alignment mode.
labeled_batch align_groups(const std::vector<question_group>& groups,
                           const estimator_config& config);

// Versioned binary container: JSON header (config, normalization, named
// shapes) followed by 64-bit little-endian parameter values. Loading
// rejects version or shape mismatches.
void save_checkpoint(const estimator_checkpoint& ckpt, const std::string& path);
estimator_checkpoint load_checkpoint(const std::string& path);

}  // namespace traceconf
