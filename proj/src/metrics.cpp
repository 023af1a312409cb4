#include "traceconf/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "traceconf/errors.hpp"

namespace traceconf {

namespace {

void check_labeled(const labeled_scores& data) {
    if (data.scores.size() != data.labels.size()) {
        throw validation_error("labeled_scores: score/label length mismatch");
    }
    for (const int y : data.labels) {
        if (y != 0 && y != 1) {
            throw validation_error("labeled_scores: labels must be 0 or 1");
        }
    }
}

}  // namespace

double auc(const labeled_scores& data) {
    check_labeled(data);
    const size_t n = data.scores.size();
    size_t n_pos = 0;
    for (const int y : data.labels) n_pos += static_cast<size_t>(y);
    const size_t n_neg = n - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw validation_error("auc: both classes required (got " + std::to_string(n_pos) +
                               " positive of " + std::to_string(n) + ")");
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        return data.scores[a] < data.scores[b];
    });

    // Average ranks over tie groups, accumulate positive-class rank sum.
    double rank_sum_pos = 0.0;
    size_t i = 0;
    while (i < n) {
        size_t j = i;
        while (j + 1 < n && data.scores[order[j + 1]] == data.scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (size_t t = i; t <= j; ++t) {
            if (data.labels[order[t]] == 1) rank_sum_pos += avg_rank;
        }
        i = j + 1;
    }

    const double np = static_cast<double>(n_pos);
    const double nn = static_cast<double>(n_neg);
    return (rank_sum_pos - np * (np + 1.0) / 2.0) / (np * nn);
}

double dbi(const embedding_set& data) {
    if (data.width == 0 || data.rows() == 0) {
        throw validation_error("dbi: empty embedding set");
    }
    if (data.labels.size() != data.rows()) {
        throw validation_error("dbi: label count does not match rows");
    }
    const size_t d = data.width;
    std::vector<double> centroid[2] = {std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
    size_t count[2] = {0, 0};

    for (size_t i = 0; i < data.rows(); ++i) {
        const int y = data.labels[i];
        if (y != 0 && y != 1) throw validation_error("dbi: labels must be 0 or 1");
        const double* p = data.row(i);
        for (size_t j = 0; j < d; ++j) centroid[y][j] += p[j];
        ++count[y];
    }
    if (count[0] == 0 || count[1] == 0) {
        throw validation_error("dbi: both classes required");
    }
    for (int c = 0; c < 2; ++c) {
        for (size_t j = 0; j < d; ++j) centroid[c][j] /= static_cast<double>(count[c]);
    }

    double spread[2] = {0.0, 0.0};
    for (size_t i = 0; i < data.rows(); ++i) {
        const int y = data.labels[i];
        const double* p = data.row(i);
        double sq = 0.0;
        for (size_t j = 0; j < d; ++j) {
            const double diff = p[j] - centroid[y][j];
            sq += diff * diff;
        }
        spread[y] += std::sqrt(sq);
    }
    spread[0] /= static_cast<double>(count[0]);
    spread[1] /= static_cast<double>(count[1]);

    double sep_sq = 0.0;
    for (size_t j = 0; j < d; ++j) {
        const double diff = centroid[0][j] - centroid[1][j];
        sep_sq += diff * diff;
    }
    const double separation = std::sqrt(sep_sq);
    if (separation == 0.0) {
        throw validation_error("dbi: coincident class centroids");
    }
    return (spread[0] + spread[1]) / separation;
}

embedding_set standardize_embeddings(const embedding_set& data) {
    embedding_set out = data;
    const size_t n = data.rows();
    if (n == 0) return out;
    for (size_t j = 0; j < data.width; ++j) {
        double mean = 0.0;
        for (size_t i = 0; i < n; ++i) mean += data.row(i)[j];
        mean /= static_cast<double>(n);
        double var = 0.0;
        for (size_t i = 0; i < n; ++i) {
            const double diff = data.row(i)[j] - mean;
            var += diff * diff;
        }
        var /= static_cast<double>(n);
        const double sd = std::sqrt(var);
        const double scale = sd > 0.0 ? 1.0 / sd : 1.0;
        for (size_t i = 0; i < n; ++i) {
            out.data[i * data.width + j] = (data.row(i)[j] - mean) * scale;
        }
    }
    return out;
}

double threshold_accuracy(const labeled_scores& data, double threshold) {
    check_labeled(data);
    if (data.scores.empty()) {
        throw validation_error("threshold_accuracy: empty input");
    }
    size_t hits = 0;
    for (size_t i = 0; i < data.scores.size(); ++i) {
        const int pred = data.scores[i] >= threshold ? 1 : 0;
        if (pred == data.labels[i]) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(data.scores.size());
}

score_histogram score_distribution(const labeled_scores& data, int bins) {
    check_labeled(data);
    if (bins < 1) throw validation_error("score_distribution: bins must be >= 1");
    if (data.scores.empty()) throw validation_error("score_distribution: empty input");

    score_histogram h;
    h.lo = *std::min_element(data.scores.begin(), data.scores.end());
    h.hi = *std::max_element(data.scores.begin(), data.scores.end());
    h.counts_neg.assign(static_cast<size_t>(bins), 0);
    h.counts_pos.assign(static_cast<size_t>(bins), 0);

    const double width = (h.hi - h.lo) / static_cast<double>(bins);
    double sum[2] = {0.0, 0.0};
    long cnt[2] = {0, 0};
    for (size_t i = 0; i < data.scores.size(); ++i) {
        const double s = data.scores[i];
        int b = 0;
        if (width > 0.0) {
            b = static_cast<int>((s - h.lo) / width);
            b = std::clamp(b, 0, bins - 1);
        }
        const int y = data.labels[i];
        (y == 1 ? h.counts_pos : h.counts_neg)[static_cast<size_t>(b)] += 1;
        sum[y] += s;
        cnt[y] += 1;
    }
    h.mean_neg = cnt[0] > 0 ? sum[0] / static_cast<double>(cnt[0]) : 0.0;
    h.mean_pos = cnt[1] > 0 ? sum[1] / static_cast<double>(cnt[1]) : 0.0;
    return h;
}

}  // namespace traceconf
