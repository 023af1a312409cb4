#pragma once

#include <cstddef>
#include <vector>

namespace traceconf {

// Parallel (score, label) lists over one trace set.
struct labeled_scores {
    std::vector<double> scores;
    std::vector<int> labels;  // binary
};

// Row-major embedding matrix with parallel labels.
struct embedding_set {
    std::size_t width = 0;
    std::vector<double> data;  // rows * width
    std::vector<int> labels;

    std::size_t rows() const { return width == 0 ? 0 : data.size() / width; }
    const double* row(std::size_t i) const { return data.data() + i * width; }
};

struct score_histogram {
    double lo = 0.0, hi = 0.0;
    std::vector<long> counts_neg;
    std::vector<long> counts_pos;
    double mean_neg = 0.0, mean_pos = 0.0;
};

// Mann-Whitney AUC via rank sums with average ranks for ties; exactly equal
// to the pairwise definition (ties count half). Requires both classes.
double auc(const labeled_scores& data);

// Two-cluster Davies-Bouldin index on label-defined clusters:
// (S0 + S1) / ||mu0 - mu1|| with S_i the mean Euclidean distance to the
// class centroid. Requires both classes and distinct centroids.
double dbi(const embedding_set& data);

// Per-feature standardization (zero mean, unit variance) for sensitivity runs.
embedding_set standardize_embeddings(const embedding_set& data);

// Fraction of traces with (score >= threshold) == label.
double threshold_accuracy(const labeled_scores& data, double threshold = 0.5);

// Per-class counts over uniform bins spanning [min, max] of all scores.
score_histogram score_distribution(const labeled_scores& data, int bins);

}  // namespace traceconf
