// Times the serial reference kernels against the OpenMP variants on
// estimator-sized workloads and checks that both produce identical bytes.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "traceconf/estimator.hpp"
#include "traceconf/kernels.hpp"
#include "traceconf/rng.hpp"

using namespace traceconf;
using kernels::exec;

namespace {

using clock_type = std::chrono::steady_clock;

double time_ms(const std::function<void()>& fn, int reps) {
    fn();  // warm-up
    const auto start = clock_type::now();
    for (int r = 0; r < reps; ++r) fn();
    const auto stop = clock_type::now();
    return std::chrono::duration<double, std::milli>(stop - start).count() /
           static_cast<double>(reps);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    double m = 0.0;
    for (size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

void report(const char* name, double serial_ms, double parallel_ms, double diff) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx   max|diff| %.1e\n", name, serial_ms,
                parallel_ms, serial_ms / parallel_ms, diff);
}

}  // namespace

int main() {
    const int n = 32, c = 32, len = 1024, k = 5;
    const int reps = 5;

#ifdef _OPENMP
    std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
    std::printf("OpenMP not enabled; both variants run serially\n");
#endif
    std::printf("workload: n=%d c=%d len=%d k=%d, %d reps\n\n", n, c, len, k, reps);
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    rng gen(7);
    std::vector<double> x(static_cast<size_t>(n) * c * len);
    std::vector<double> w(static_cast<size_t>(c) * c * k);
    std::vector<double> b(static_cast<size_t>(c));
    std::vector<uint8_t> mask(static_cast<size_t>(n) * len);
    for (auto& v : x) v = gen.normal();
    for (auto& v : w) v = gen.normal() * 0.1;
    for (auto& v : b) v = gen.normal() * 0.1;
    for (auto& m : mask) m = gen.uniform() < 0.9 ? 1 : 0;

    std::vector<double> y_s(x.size()), y_p(x.size());
    {
        const double ts = time_ms(
            [&] { kernels::conv1d_forward(exec::serial, x.data(), y_s.data(), w.data(),
                                          b.data(), n, c, c, len, k); },
            reps);
        const double tp = time_ms(
            [&] { kernels::conv1d_forward(exec::parallel, x.data(), y_p.data(), w.data(),
                                          b.data(), n, c, c, len, k); },
            reps);
        report("conv1d_forward", ts, tp, max_abs_diff(y_s, y_p));
    }

    std::vector<double> dx_s(x.size()), dx_p(x.size());
    {
        const double ts = time_ms(
            [&] { kernels::conv1d_backward_input(exec::serial, y_s.data(), dx_s.data(),
                                                 w.data(), n, c, c, len, k); },
            reps);
        const double tp = time_ms(
            [&] { kernels::conv1d_backward_input(exec::parallel, y_p.data(), dx_p.data(),
                                                 w.data(), n, c, c, len, k); },
            reps);
        report("conv1d_backward_input", ts, tp, max_abs_diff(dx_s, dx_p));
    }

    std::vector<double> dw_s(w.size()), db_s(b.size()), dw_p(w.size()), db_p(b.size());
    {
        const double ts = time_ms(
            [&] {
                std::fill(dw_s.begin(), dw_s.end(), 0.0);
                std::fill(db_s.begin(), db_s.end(), 0.0);
                kernels::conv1d_backward_params(exec::serial, y_s.data(), x.data(), dw_s.data(),
                                                db_s.data(), n, c, c, len, k);
            },
            reps);
        const double tp = time_ms(
            [&] {
                std::fill(dw_p.begin(), dw_p.end(), 0.0);
                std::fill(db_p.begin(), db_p.end(), 0.0);
                kernels::conv1d_backward_params(exec::parallel, y_p.data(), x.data(),
                                                dw_p.data(), db_p.data(), n, c, c, len, k);
            },
            reps);
        report("conv1d_backward_params", ts, tp, max_abs_diff(dw_s, dw_p));
    }

    // whole-readout comparison: forward + backward on one batch
    {
        estimator_config cfg;
        cfg.l_max = len;
        cfg.channels = 16;
        cfg.blocks = 2;
        cfg.seed = 11;
        estimator_checkpoint ckpt = init_estimator(cfg);
        ckpt.norm_mean = 0.0;
        ckpt.norm_std = 1.0;

        aligned_batch batch;
        batch.count = n;
        batch.l_max = len;
        batch.values.assign(static_cast<size_t>(n) * len, 0.0);
        batch.mask.assign(static_cast<size_t>(n) * len, 1);
        for (auto& v : batch.values) v = 2.0 + 0.25 * gen.normal();
        std::vector<int> labels(static_cast<size_t>(n));
        for (auto& y : labels) y = gen.uniform() < 0.5 ? 1 : 0;

        std::vector<double> g_s, g_p;
        const double ts = time_ms(
            [&] { backward(ckpt, batch, labels, 1.0, 1.0, g_s, exec::serial); }, reps);
        const double tp = time_ms(
            [&] { backward(ckpt, batch, labels, 1.0, 1.0, g_p, exec::parallel); }, reps);
        report("estimator fwd+bwd", ts, tp, max_abs_diff(g_s, g_p));
    }

    return 0;
}
