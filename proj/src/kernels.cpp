#include "traceconf/kernels.hpp"

#include <algorithm>

namespace traceconf::kernels {

namespace {

inline double conv_out_element(const double* x, const double* w, const double* b, int c_in,
                               int len, int k, int n_idx, int co, int i) {
    const int half = k / 2;
    double acc = b[co];
    for (int ci = 0; ci < c_in; ++ci) {
        const double* xrow = x + (static_cast<long>(n_idx) * c_in + ci) * len;
        const double* wrow = w + (static_cast<long>(co) * c_in + ci) * k;
        const int t_lo = std::max(0, half - i);
        const int t_hi = std::min(k, len + half - i);
        for (int t = t_lo; t < t_hi; ++t) {
            acc += wrow[t] * xrow[i + t - half];
        }
    }
    return acc;
}

inline double conv_in_grad_element(const double* dy, const double* w, int c_in, int c_out,
                                   int len, int k, int n_idx, int ci, int i) {
    const int half = k / 2;
    double acc = 0.0;
    for (int co = 0; co < c_out; ++co) {
        const double* dyrow = dy + (static_cast<long>(n_idx) * c_out + co) * len;
        const double* wrow = w + (static_cast<long>(co) * c_in + ci) * k;
        for (int t = 0; t < k; ++t) {
            const int j = i - t + half;
            if (j >= 0 && j < len) {
                acc += wrow[t] * dyrow[j];
            }
        }
    }
    return acc;
}

}  // namespace

void conv1d_forward(exec mode, const double* x, double* y, const double* w, const double* b,
                    int n, int c_in, int c_out, int len, int k) {
    const long rows = static_cast<long>(n) * c_out;
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            const int n_idx = static_cast<int>(r / c_out);
            const int co = static_cast<int>(r % c_out);
            double* yrow = y + r * len;
            for (int i = 0; i < len; ++i) {
                yrow[i] = conv_out_element(x, w, b, c_in, len, k, n_idx, co, i);
            }
        }
    } else {
        for (long r = 0; r < rows; ++r) {
            const int n_idx = static_cast<int>(r / c_out);
            const int co = static_cast<int>(r % c_out);
            double* yrow = y + r * len;
            for (int i = 0; i < len; ++i) {
                yrow[i] = conv_out_element(x, w, b, c_in, len, k, n_idx, co, i);
            }
        }
    }
}

void conv1d_backward_input(exec mode, const double* dy, double* dx, const double* w, int n,
                           int c_in, int c_out, int len, int k) {
    const long rows = static_cast<long>(n) * c_in;
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            const int n_idx = static_cast<int>(r / c_in);
            const int ci = static_cast<int>(r % c_in);
            double* dxrow = dx + r * len;
            for (int i = 0; i < len; ++i) {
                dxrow[i] = conv_in_grad_element(dy, w, c_in, c_out, len, k, n_idx, ci, i);
            }
        }
    } else {
        for (long r = 0; r < rows; ++r) {
            const int n_idx = static_cast<int>(r / c_in);
            const int ci = static_cast<int>(r % c_in);
            double* dxrow = dx + r * len;
            for (int i = 0; i < len; ++i) {
                dxrow[i] = conv_in_grad_element(dy, w, c_in, c_out, len, k, n_idx, ci, i);
            }
        }
    }
}

void conv1d_backward_params(exec mode, const double* dy, const double* x, double* dw,
                            double* db, int n, int c_in, int c_out, int len, int k) {
    const int half = k / 2;
    const long w_elems = static_cast<long>(c_out) * c_in * k;

    // One thread owns one weight element and scans (n, i) in fixed order.
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long e = 0; e < w_elems; ++e) {
            const int co = static_cast<int>(e / (static_cast<long>(c_in) * k));
            const int ci = static_cast<int>((e / k) % c_in);
            const int t = static_cast<int>(e % k);
            double acc = 0.0;
            for (int n_idx = 0; n_idx < n; ++n_idx) {
                const double* dyrow = dy + (static_cast<long>(n_idx) * c_out + co) * len;
                const double* xrow = x + (static_cast<long>(n_idx) * c_in + ci) * len;
                const int i_lo = std::max(0, half - t);
                const int i_hi = std::min(len, len + half - t);
                for (int i = i_lo; i < i_hi; ++i) {
                    acc += dyrow[i] * xrow[i + t - half];
                }
            }
            dw[e] += acc;
        }
    } else {
        for (long e = 0; e < w_elems; ++e) {
            const int co = static_cast<int>(e / (static_cast<long>(c_in) * k));
            const int ci = static_cast<int>((e / k) % c_in);
            const int t = static_cast<int>(e % k);
            double acc = 0.0;
            for (int n_idx = 0; n_idx < n; ++n_idx) {
                const double* dyrow = dy + (static_cast<long>(n_idx) * c_out + co) * len;
                const double* xrow = x + (static_cast<long>(n_idx) * c_in + ci) * len;
                const int i_lo = std::max(0, half - t);
                const int i_hi = std::min(len, len + half - t);
                for (int i = i_lo; i < i_hi; ++i) {
                    acc += dyrow[i] * xrow[i + t - half];
                }
            }
            dw[e] += acc;
        }
    }

    for (int co = 0; co < c_out; ++co) {
        double acc = 0.0;
        for (int n_idx = 0; n_idx < n; ++n_idx) {
            const double* dyrow = dy + (static_cast<long>(n_idx) * c_out + co) * len;
            for (int i = 0; i < len; ++i) acc += dyrow[i];
        }
        db[co] += acc;
    }
}

void apply_mask(exec mode, double* x, const uint8_t* mask, int n, int c, int len) {
    const long rows = static_cast<long>(n) * c;
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            double* xrow = x + r * len;
            for (int i = 0; i < len; ++i) {
                if (!mrow[i]) xrow[i] = 0.0;
            }
        }
    } else {
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            double* xrow = x + r * len;
            for (int i = 0; i < len; ++i) {
                if (!mrow[i]) xrow[i] = 0.0;
            }
        }
    }
}

void relu_forward(exec mode, const double* x, double* y, long total) {
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long i = 0; i < total; ++i) {
            y[i] = x[i] > 0.0 ? x[i] : 0.0;
        }
    } else {
        for (long i = 0; i < total; ++i) {
            y[i] = x[i] > 0.0 ? x[i] : 0.0;
        }
    }
}

void relu_backward(exec mode, const double* x, const double* dy, double* dx, long total) {
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long i = 0; i < total; ++i) {
            dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        }
    } else {
        for (long i = 0; i < total; ++i) {
            dx[i] = x[i] > 0.0 ? dy[i] : 0.0;
        }
    }
}

void add_inplace(exec mode, double* y, const double* x, long total) {
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long i = 0; i < total; ++i) {
            y[i] += x[i];
        }
    } else {
        for (long i = 0; i < total; ++i) {
            y[i] += x[i];
        }
    }
}

void masked_mean_pool(exec mode, const double* x, const uint8_t* mask, double* h, int n, int c,
                      int len) {
    const long rows = static_cast<long>(n) * c;
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            const double* xrow = x + r * len;
            double sum = 0.0;
            long cnt = 0;
            for (int i = 0; i < len; ++i) {
                if (mrow[i]) {
                    sum += xrow[i];
                    ++cnt;
                }
            }
            h[r] = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
        }
    } else {
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            const double* xrow = x + r * len;
            double sum = 0.0;
            long cnt = 0;
            for (int i = 0; i < len; ++i) {
                if (mrow[i]) {
                    sum += xrow[i];
                    ++cnt;
                }
            }
            h[r] = cnt > 0 ? sum / static_cast<double>(cnt) : 0.0;
        }
    }
}

void masked_mean_pool_backward(exec mode, const double* dh, const uint8_t* mask, double* dx,
                               int n, int c, int len) {
    const long rows = static_cast<long>(n) * c;
    if (mode == exec::parallel) {
#pragma omp parallel for schedule(static)
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            double* dxrow = dx + r * len;
            long cnt = 0;
            for (int i = 0; i < len; ++i) cnt += mrow[i];
            if (cnt == 0) continue;
            const double g = dh[r] / static_cast<double>(cnt);
            for (int i = 0; i < len; ++i) {
                if (mrow[i]) dxrow[i] += g;
            }
        }
    } else {
        for (long r = 0; r < rows; ++r) {
            const uint8_t* mrow = mask + (r / c) * len;
            double* dxrow = dx + r * len;
            long cnt = 0;
            for (int i = 0; i < len; ++i) cnt += mrow[i];
            if (cnt == 0) continue;
            const double g = dh[r] / static_cast<double>(cnt);
            for (int i = 0; i < len; ++i) {
                if (mrow[i]) dxrow[i] += g;
            }
        }
    }
}

}  // namespace traceconf::kernels
