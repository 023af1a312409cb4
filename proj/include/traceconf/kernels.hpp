#pragma once

#include <cstdint>

namespace traceconf::kernels {

// Every kernel exists in two variants: a plain serial reference and an
// OpenMP-parallel version. Both compute each output element with an
// identical inner-loop order, so results are bitwise equal regardless of
// variant or thread count; tests assert exact equality.
enum class exec { serial, parallel };

// y[n][co][i] = b[co] + sum_ci sum_t w[co][ci][t] * x[n][ci][i + t - k/2]
// Same padding (k odd); positions outside [0, len) read as zero.
void conv1d_forward(exec mode, const double* x, double* y, const double* w, const double* b,
                    int n, int c_in, int c_out, int len, int k);

// dx[n][ci][i] = sum_co sum_t w[co][ci][t] * dy[n][co][i - t + k/2]
void conv1d_backward_input(exec mode, const double* dy, double* dx, const double* w, int n,
                           int c_in, int c_out, int len, int k);

// dw[co][ci][t] += sum_n sum_i dy[n][co][i] * x[n][ci][i + t - k/2]
// db[co]       += sum_n sum_i dy[n][co][i]
// Each weight element is one independent ordered sum; accumulates into dw/db.
void conv1d_backward_params(exec mode, const double* dy, const double* x, double* dw,
                            double* db, int n, int c_in, int c_out, int len, int k);

// x[n][c][i] = 0 wherever mask[n][i] == 0 (mask broadcast over channels).
void apply_mask(exec mode, double* x, const uint8_t* mask, int n, int c, int len);

void relu_forward(exec mode, const double* x, double* y, long total);

// dx[i] = dy[i] * (x[i] > 0), with x the pre-activation; subgradient at 0 is 0.
void relu_backward(exec mode, const double* x, const double* dy, double* dx, long total);

void add_inplace(exec mode, double* y, const double* x, long total);

// h[n][c] = sum_i x[n][c][i] * mask[n][i] / max(1, sum_i mask[n][i]);
// an all-zero mask row yields h[n][*] = 0.
void masked_mean_pool(exec mode, const double* x, const uint8_t* mask, double* h, int n, int c,
                      int len);

// dx[n][c][i] += dh[n][c] * mask[n][i] / sum_i mask[n][i]
void masked_mean_pool_backward(exec mode, const double* dh, const uint8_t* mask, double* dx,
                               int n, int c, int len);

}  // namespace traceconf::kernels
