// Compares the serial reference kernels against the OpenMP variants and
// verifies they produce bit-identical results while timing both.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

#include "msef/kernels.hpp"
#include "msef/rng.hpp"

using Clock = std::chrono::steady_clock;

namespace {

double time_ms(const std::function<void()>& fn, int reps) {
    const auto t0 = Clock::now();
    for (int i = 0; i < reps; ++i) fn();
    const auto t1 = Clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    std::printf("openmp: %s (max threads %d)\n", msef::kernels::openmp_enabled() ? "enabled" : "disabled",
                msef::kernels::max_threads());
    std::printf("%-10s %-6s %12s %12s %9s %10s\n", "kernel", "n", "serial(ms)", "omp(ms)", "speedup",
                "bit-equal");

    msef::CounterRng rng(7);
    for (int n : {64, 128, 256, 512}) {
        std::vector<double> a(static_cast<size_t>(n) * n), b(a.size()), c1(a.size()), c2(a.size());
        for (auto& v : a) v = rng.gaussian();
        for (auto& v : b) v = rng.gaussian();
        const int reps = n <= 128 ? 20 : 5;

        struct Variant {
            const char* name;
            void (*serial)(const double*, const double*, double*, int, int, int);
            void (*omp)(const double*, const double*, double*, int, int, int);
        };
        const Variant variants[] = {
            {"matmul", msef::kernels::matmul_serial, msef::kernels::matmul_omp},
            {"matmul_nt", msef::kernels::matmul_nt_serial, msef::kernels::matmul_nt_omp},
            {"matmul_tn", msef::kernels::matmul_tn_serial, msef::kernels::matmul_tn_omp},
        };
        for (const auto& v : variants) {
            const double ts = time_ms([&] { v.serial(a.data(), b.data(), c1.data(), n, n, n); }, reps);
            const double tp = time_ms([&] { v.omp(a.data(), b.data(), c2.data(), n, n, n); }, reps);
            const bool equal = std::memcmp(c1.data(), c2.data(), c1.size() * sizeof(double)) == 0;
            std::printf("%-10s %-6d %12.3f %12.3f %8.2fx %10s\n", v.name, n, ts, tp, ts / tp,
                        equal ? "yes" : "NO");
            if (!equal) return 1;
        }
    }
    return 0;
}
