// Benchmark: serial reference kernels vs their OpenMP variants, plus the
// sample-parallel Monte-Carlo filter axis. Prints one table row per case.

#include <chrono>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "dvae/filter.hpp"
#include "dvae/kernels.hpp"
#include "dvae/rng.hpp"

using namespace dvae;
using clk = std::chrono::steady_clock;

namespace {

double time_of(const std::function<void()>& fn, int reps) {
    fn();  // warm up
    const auto t0 = clk::now();
    for (int i = 0; i < reps; ++i) fn();
    return std::chrono::duration<double>(clk::now() - t0).count() / reps;
}

void bench_matmul(int n) {
    Rng rng(n);
    Matrix a = rng.normal_matrix(n, n);
    Matrix b = rng.normal_matrix(n, n);
    Matrix c(n, n);
    const int reps = std::max(2, 50000000 / (n * n * n));
    const double flops = 2.0 * n * n * n;
    const double ts = time_of(
        [&] { kernels::mul_nn_serial(n, n, n, a.data(), b.data(), c.data()); }, reps);
    const double tp =
        time_of([&] { kernels::mul_nn_omp(n, n, n, a.data(), b.data(), c.data()); }, reps);
    std::printf("matmul      n=%4d   serial %7.2f ms (%5.2f GF/s)   omp %7.2f ms (%5.2f GF/s)   speedup %.2fx\n",
                n, ts * 1e3, flops / ts / 1e9, tp * 1e3, flops / tp / 1e9, ts / tp);
}

void bench_lu(int n) {
    Rng rng(n + 1);
    Matrix a0 = rng.normal_matrix(n, n);
    for (int i = 0; i < n; ++i) a0(i, i) += n;
    std::vector<int> piv(n);
    const int reps = std::max(2, 20000000 / (n * n * n / 3));
    const double flops = 2.0 * n * n * n / 3.0;
    Matrix a = a0;
    const double ts = time_of(
        [&] {
            a = a0;
            kernels::lu_inplace_serial(a.data(), n, piv.data());
        },
        reps);
    const double tp = time_of(
        [&] {
            a = a0;
            kernels::lu_inplace_omp(a.data(), n, piv.data());
        },
        reps);
    std::printf("lu          n=%4d   serial %7.2f ms (%5.2f GF/s)   omp %7.2f ms (%5.2f GF/s)   speedup %.2fx\n",
                n, ts * 1e3, flops / ts / 1e9, tp * 1e3, flops / tp / 1e9, ts / tp);
}

void bench_chol(int n) {
    Rng rng(n + 2);
    Matrix r = rng.normal_matrix(n, n);
    Matrix a0 = symmetrize(add(matmul_nt(r, r), scale(Matrix::identity(n), n)));
    const int reps = std::max(2, 20000000 / (n * n * n / 3));
    const double flops = 1.0 * n * n * n / 3.0;
    Matrix a = a0;
    const double ts = time_of(
        [&] {
            a = a0;
            kernels::chol_inplace_serial(a.data(), n);
        },
        reps);
    const double tp = time_of(
        [&] {
            a = a0;
            kernels::chol_inplace_omp(a.data(), n);
        },
        reps);
    std::printf("cholesky    n=%4d   serial %7.2f ms (%5.2f GF/s)   omp %7.2f ms (%5.2f GF/s)   speedup %.2fx\n",
                n, ts * 1e3, flops / ts / 1e9, tp * 1e3, flops / tp / 1e9, ts / tp);
}

void bench_filter_batch() {
    const int n_u = 48, N = 40, M = 8;
    Mesh1D mesh{n_u, 0.0, 1.0, true};
    dyn::TransitionModel model;
    model.sys = dyn::make_advection_system(mesh, 0.02, 0.1);
    model.scheme = dyn::Scheme::CrankNicolson;
    model.dt = 0.02;
    dyn::ModelParams p;
    p.values = Matrix(1, 1, {0.5});
    Matrix H = Matrix::identity(n_u);
    Matrix R = scale(Matrix::identity(n_u), 0.01);
    filt::GaussianState prior{Matrix(n_u, 1), scale(Matrix::identity(n_u), 0.04)};
    Rng rng(7);
    std::vector<Matrix> samples;
    for (int i = 0; i < M; ++i) samples.push_back(rng.normal_matrix(N, n_u));

    auto run = [&] {
        auto mix = filt::marginal_filter_encoder(model, p, samples, H, R, prior, 2);
        (void)mix;
    };
#ifdef _OPENMP
    const int max_threads = omp_get_max_threads();
    omp_set_num_threads(1);
    const double ts = time_of(run, 3);
    omp_set_num_threads(max_threads);
    const double tp = time_of(run, 3);
    std::printf("filter batch (M=%d runs)   1 thread %7.1f ms   %d threads %7.1f ms   speedup %.2fx\n",
                M, ts * 1e3, max_threads, tp * 1e3, ts / tp);
#else
    const double ts = time_of(run, 3);
    std::printf("filter batch (M=%d runs)   %7.1f ms (OpenMP disabled)\n", M, ts * 1e3);
#endif
}

} // namespace

int main() {
#ifdef _OPENMP
    std::printf("OpenMP enabled, max threads = %d\n\n", omp_get_max_threads());
#else
    std::printf("OpenMP disabled (serial build)\n\n");
#endif
    for (int n : {64, 128, 256, 384}) bench_matmul(n);
    for (int n : {128, 256, 384}) bench_lu(n);
    for (int n : {128, 256, 384}) bench_chol(n);
    bench_filter_batch();
    return 0;
}
