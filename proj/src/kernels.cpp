#include "dvae/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dvae::kernels {

namespace {
std::atomic<bool> g_parallel{true};
// Below this many fused multiply-adds the fork/join overhead dominates.
constexpr long long kParallelFlopThreshold = 64LL * 64 * 64;

inline bool go_parallel(long long work) {
#ifdef _OPENMP
    return g_parallel.load(std::memory_order_relaxed) && work >= kParallelFlopThreshold &&
           omp_get_level() == 0;
#else
    (void)work;
    return false;
#endif
}
} // namespace

void set_parallel(bool enabled) { g_parallel.store(enabled, std::memory_order_relaxed); }
bool parallel_enabled() { return g_parallel.load(std::memory_order_relaxed); }

// ---- matmul -------------------------------------------------------------

static inline void mul_nn_row(int i, int k, int n, const double* A, const double* B,
                              double* C) {
    double* ci = C + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    const double* ai = A + static_cast<size_t>(i) * k;
    for (int l = 0; l < k; ++l) {
        const double a = ai[l];
        if (a == 0.0) continue;
        const double* bl = B + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) ci[j] += a * bl[j];
    }
}

void mul_nn_serial(int m, int k, int n, const double* A, const double* B, double* C) {
    for (int i = 0; i < m; ++i) mul_nn_row(i, k, n, A, B, C);
}

void mul_nn_omp(int m, int k, int n, const double* A, const double* B, double* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) mul_nn_row(i, k, n, A, B, C);
}

void mul_nn(int m, int k, int n, const double* A, const double* B, double* C) {
    if (go_parallel(1LL * m * k * n))
        mul_nn_omp(m, k, n, A, B, C);
    else
        mul_nn_serial(m, k, n, A, B, C);
}

static inline void mul_nt_row(int i, int k, int n, const double* A, const double* B,
                              double* C) {
    const double* ai = A + static_cast<size_t>(i) * k;
    double* ci = C + static_cast<size_t>(i) * n;
    for (int j = 0; j < n; ++j) {
        const double* bj = B + static_cast<size_t>(j) * k;
        double s = 0.0;
        for (int l = 0; l < k; ++l) s += ai[l] * bj[l];
        ci[j] = s;
    }
}

void mul_nt_serial(int m, int k, int n, const double* A, const double* B, double* C) {
    for (int i = 0; i < m; ++i) mul_nt_row(i, k, n, A, B, C);
}

void mul_nt_omp(int m, int k, int n, const double* A, const double* B, double* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) mul_nt_row(i, k, n, A, B, C);
}

void mul_nt(int m, int k, int n, const double* A, const double* B, double* C) {
    // the dot-product form is a serial FP reduction the compiler cannot
    // vectorize; above a small size it is cheaper to transpose B and use
    // the axpy-form kernel
    if (1LL * m * k * n >= 32LL * 32 * 32) {
        std::vector<double> bt(static_cast<size_t>(k) * n);
        for (int j = 0; j < n; ++j)
            for (int l = 0; l < k; ++l) bt[static_cast<size_t>(l) * n + j] = B[static_cast<size_t>(j) * k + l];
        mul_nn(m, k, n, A, bt.data(), C);
        return;
    }
    if (go_parallel(1LL * m * k * n))
        mul_nt_omp(m, k, n, A, B, C);
    else
        mul_nt_serial(m, k, n, A, B, C);
}

static inline void mul_tn_row(int i, int k, int m, int n, const double* A, const double* B,
                              double* C) {
    // C[i,:] = sum_l A[l,i] * B[l,:]
    double* ci = C + static_cast<size_t>(i) * n;
    std::memset(ci, 0, sizeof(double) * n);
    for (int l = 0; l < k; ++l) {
        const double a = A[static_cast<size_t>(l) * m + i];
        if (a == 0.0) continue;
        const double* bl = B + static_cast<size_t>(l) * n;
        for (int j = 0; j < n; ++j) ci[j] += a * bl[j];
    }
}

void mul_tn_serial(int m, int k, int n, const double* A, const double* B, double* C) {
    for (int i = 0; i < m; ++i) mul_tn_row(i, k, m, n, A, B, C);
}

void mul_tn_omp(int m, int k, int n, const double* A, const double* B, double* C) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int i = 0; i < m; ++i) mul_tn_row(i, k, m, n, A, B, C);
}

void mul_tn(int m, int k, int n, const double* A, const double* B, double* C) {
    if (go_parallel(1LL * m * k * n))
        mul_tn_omp(m, k, n, A, B, C);
    else
        mul_tn_serial(m, k, n, A, B, C);
}

// ---- Cholesky -----------------------------------------------------------

static inline int chol_impl(double* a, int n, bool parallel) {
    for (int j = 0; j < n; ++j) {
        double* aj = a + static_cast<size_t>(j) * n;
        double d = aj[j];
        for (int l = 0; l < j; ++l) d -= aj[l] * aj[l];
        if (!(d > 0.0) || !std::isfinite(d)) return j;
        const double ljj = std::sqrt(d);
        aj[j] = ljj;
        const double inv = 1.0 / ljj;
        if (parallel) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int i = j + 1; i < n; ++i) {
                double* ai = a + static_cast<size_t>(i) * n;
                double s = ai[j];
                for (int l = 0; l < j; ++l) s -= ai[l] * aj[l];
                ai[j] = s * inv;
            }
        } else {
            for (int i = j + 1; i < n; ++i) {
                double* ai = a + static_cast<size_t>(i) * n;
                double s = ai[j];
                for (int l = 0; l < j; ++l) s -= ai[l] * aj[l];
                ai[j] = s * inv;
            }
        }
    }
    // zero the strict upper triangle so the factor is clean
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) a[static_cast<size_t>(i) * n + j] = 0.0;
    return -1;
}

int chol_inplace_serial(double* a, int n) { return chol_impl(a, n, false); }
int chol_inplace_omp(double* a, int n) { return chol_impl(a, n, true); }
int chol_inplace(double* a, int n) {
    // per-column fork/join only pays off for fairly large factorizations
    return chol_impl(a, n, n >= 192 && go_parallel(1LL * n * n * n / 3));
}

namespace {
// substitution restricted to the column block [c0, c1)
void chol_solve_cols(const double* L, int n, double* b, int nrhs, int c0, int c1) {
    for (int i = 0; i < n; ++i) {
        const double* li = L + static_cast<size_t>(i) * n;
        double* bi = b + static_cast<size_t>(i) * nrhs;
        for (int l = 0; l < i; ++l) {
            const double c = li[l];
            if (c == 0.0) continue;
            const double* bl = b + static_cast<size_t>(l) * nrhs;
            for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
        }
        const double inv = 1.0 / li[i];
        for (int j = c0; j < c1; ++j) bi[j] *= inv;
    }
    for (int i = n - 1; i >= 0; --i) {
        double* bi = b + static_cast<size_t>(i) * nrhs;
        for (int l = i + 1; l < n; ++l) {
            const double c = L[static_cast<size_t>(l) * n + i];
            if (c == 0.0) continue;
            const double* bl = b + static_cast<size_t>(l) * nrhs;
            for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
        }
        const double inv = 1.0 / L[static_cast<size_t>(i) * n + i];
        for (int j = c0; j < c1; ++j) bi[j] *= inv;
    }
}
} // namespace

void chol_solve_inplace(const double* L, int n, double* b, int nrhs) {
#ifdef _OPENMP
    if (nrhs >= 32 && go_parallel(2LL * n * n * nrhs)) {
        const int nb = 2 * omp_get_max_threads();
        const int step = (nrhs + nb - 1) / nb;
#pragma omp parallel for schedule(static)
        for (int c0 = 0; c0 < nrhs; c0 += step)
            chol_solve_cols(L, n, b, nrhs, c0, std::min(nrhs, c0 + step));
        return;
    }
#endif
    chol_solve_cols(L, n, b, nrhs, 0, nrhs);
}

// ---- LU with partial pivoting ---------------------------------------------

static inline int lu_impl(double* a, int n, int* piv, bool parallel) {
    for (int k = 0; k < n; ++k) {
        int p = k;
        double best = std::fabs(a[static_cast<size_t>(k) * n + k]);
        for (int i = k + 1; i < n; ++i) {
            const double v = std::fabs(a[static_cast<size_t>(i) * n + k]);
            if (v > best) {
                best = v;
                p = i;
            }
        }
        piv[k] = p;
        if (best == 0.0 || !std::isfinite(best)) return k;
        if (p != k)
            for (int j = 0; j < n; ++j)
                std::swap(a[static_cast<size_t>(k) * n + j], a[static_cast<size_t>(p) * n + j]);
        const double inv = 1.0 / a[static_cast<size_t>(k) * n + k];
        const double* ak = a + static_cast<size_t>(k) * n;
        if (parallel && n - k > 48) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
            for (int i = k + 1; i < n; ++i) {
                double* ai = a + static_cast<size_t>(i) * n;
                const double f = ai[k] * inv;
                ai[k] = f;
                for (int j = k + 1; j < n; ++j) ai[j] -= f * ak[j];
            }
        } else {
            for (int i = k + 1; i < n; ++i) {
                double* ai = a + static_cast<size_t>(i) * n;
                const double f = ai[k] * inv;
                ai[k] = f;
                for (int j = k + 1; j < n; ++j) ai[j] -= f * ak[j];
            }
        }
    }
    return -1;
}

int lu_inplace_serial(double* a, int n, int* piv) { return lu_impl(a, n, piv, false); }
int lu_inplace_omp(double* a, int n, int* piv) { return lu_impl(a, n, piv, true); }
int lu_inplace(double* a, int n, int* piv) {
    return lu_impl(a, n, piv, n >= 192 && go_parallel(2LL * n * n * n / 3));
}

namespace {
void lu_solve_cols(const double* lu, const int* piv, int n, double* b, int nrhs, bool trans,
                   int c0, int c1) {
    if (!trans) {
        for (int k = 0; k < n; ++k)
            if (piv[k] != k)
                for (int j = c0; j < c1; ++j)
                    std::swap(b[static_cast<size_t>(k) * nrhs + j],
                              b[static_cast<size_t>(piv[k]) * nrhs + j]);
        // L y = Pb (unit lower)
        for (int i = 0; i < n; ++i) {
            double* bi = b + static_cast<size_t>(i) * nrhs;
            const double* li = lu + static_cast<size_t>(i) * n;
            for (int l = 0; l < i; ++l) {
                const double c = li[l];
                if (c == 0.0) continue;
                const double* bl = b + static_cast<size_t>(l) * nrhs;
                for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
            }
        }
        // U x = y
        for (int i = n - 1; i >= 0; --i) {
            double* bi = b + static_cast<size_t>(i) * nrhs;
            const double* ui = lu + static_cast<size_t>(i) * n;
            for (int l = i + 1; l < n; ++l) {
                const double c = ui[l];
                if (c == 0.0) continue;
                const double* bl = b + static_cast<size_t>(l) * nrhs;
                for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
            }
            const double inv = 1.0 / ui[i];
            for (int j = c0; j < c1; ++j) bi[j] *= inv;
        }
    } else {
        // A^T X = B with PA = LU => A^T = U^T L^T P, solve U^T y = B,
        // L^T z = y, X = P^T z.
        for (int i = 0; i < n; ++i) {
            double* bi = b + static_cast<size_t>(i) * nrhs;
            for (int l = 0; l < i; ++l) {
                const double c = lu[static_cast<size_t>(l) * n + i];
                if (c == 0.0) continue;
                const double* bl = b + static_cast<size_t>(l) * nrhs;
                for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
            }
            const double inv = 1.0 / lu[static_cast<size_t>(i) * n + i];
            for (int j = c0; j < c1; ++j) bi[j] *= inv;
        }
        for (int i = n - 1; i >= 0; --i) {
            double* bi = b + static_cast<size_t>(i) * nrhs;
            for (int l = i + 1; l < n; ++l) {
                const double c = lu[static_cast<size_t>(l) * n + i];
                if (c == 0.0) continue;
                const double* bl = b + static_cast<size_t>(l) * nrhs;
                for (int j = c0; j < c1; ++j) bi[j] -= c * bl[j];
            }
        }
        for (int k = n - 1; k >= 0; --k)
            if (piv[k] != k)
                for (int j = c0; j < c1; ++j)
                    std::swap(b[static_cast<size_t>(k) * nrhs + j],
                              b[static_cast<size_t>(piv[k]) * nrhs + j]);
    }
}
} // namespace

void lu_solve_inplace(const double* lu, const int* piv, int n, double* b, int nrhs,
                      bool trans) {
#ifdef _OPENMP
    if (nrhs >= 32 && go_parallel(2LL * n * n * nrhs)) {
        const int nb = 2 * omp_get_max_threads();
        const int step = (nrhs + nb - 1) / nb;
#pragma omp parallel for schedule(static)
        for (int c0 = 0; c0 < nrhs; c0 += step)
            lu_solve_cols(lu, piv, n, b, nrhs, trans, c0, std::min(nrhs, c0 + step));
        return;
    }
#endif
    lu_solve_cols(lu, piv, n, b, nrhs, trans, 0, nrhs);
}

} // namespace dvae::kernels
