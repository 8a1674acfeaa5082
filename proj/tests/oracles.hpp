#ifndef DVAE_TEST_ORACLES_HPP
#define DVAE_TEST_ORACLES_HPP

// Independent reference implementations used only by tests: a textbook
// Kalman filter, the stacked joint-Gaussian evidence of a linear SSM, and
// a dense high-order quadrature for the forcing covariance.

#include <cmath>
#include <vector>

#include "dvae/matrix.hpp"

namespace dvae::test {

// Linear-Gaussian SSM: u_0 ~ N(m0, C0); u_n = Phi u_{n-1} + q, q ~ N(0, Q);
// x_n = H u_n + r, r ~ N(0, R), n = 1..N.
struct Lgssm {
    Matrix Phi, Q, H, R, m0, C0;
};

struct KalmanOracleResult {
    std::vector<Matrix> pred_m, pred_C, post_m, post_C;
    double loglik = 0.0;
};

inline KalmanOracleResult kalman_oracle(const Lgssm& g, const Matrix& x_seq) {
    KalmanOracleResult out;
    Matrix m = g.m0, C = g.C0;
    const int N = x_seq.rows();
    const int nx = g.H.rows();
    for (int n = 0; n < N; ++n) {
        m = matmul(g.Phi, m);
        C = add(matmul_nt(matmul(g.Phi, C), g.Phi), g.Q);
        out.pred_m.push_back(m);
        out.pred_C.push_back(C);
        Matrix xn(nx, 1);
        for (int j = 0; j < nx; ++j) xn(j, 0) = x_seq(n, j);
        Matrix d = sub(xn, matmul(g.H, m));
        Matrix S = add(matmul_nt(matmul(g.H, C), g.H), g.R);
        CholFactor fs = cholesky(S);
        Matrix sol = chol_solve(fs, d);
        out.loglik += -0.5 * (fs.logdet() + dot(d, sol) +
                              nx * 1.8378770664093454835606594728112);
        Matrix K = transpose(chol_solve(fs, matmul(g.H, C)));
        m = add(m, matmul(K, d));
        C = sub(C, matmul(K, matmul(g.H, C)));
        C = symmetrize(C);
        out.post_m.push_back(m);
        out.post_C.push_back(C);
    }
    return out;
}

// Stacked joint density of x_{1:N}: mean and covariance assembled from the
// state recursion, evaluated with a dense Cholesky.
inline double joint_gaussian_loglik(const Lgssm& g, const Matrix& x_seq) {
    const int N = x_seq.rows();
    const int nx = g.H.rows();
    // state means and pairwise covariances Cov(u_i, u_j), 1-indexed steps
    std::vector<Matrix> mu(N + 1);
    std::vector<std::vector<Matrix>> P(N + 1, std::vector<Matrix>(N + 1));
    mu[0] = g.m0;
    P[0][0] = g.C0;
    for (int i = 1; i <= N; ++i) {
        mu[i] = matmul(g.Phi, mu[i - 1]);
        P[i][i] = add(matmul_nt(matmul(g.Phi, P[i - 1][i - 1]), g.Phi), g.Q);
        for (int j = 0; j < i; ++j) P[i][j] = matmul(g.Phi, P[i - 1][j]);
        for (int j = 0; j < i; ++j) P[j][i] = transpose(P[i][j]);
    }
    Matrix mean(N * nx, 1);
    Matrix cov(N * nx, N * nx);
    for (int i = 1; i <= N; ++i) {
        Matrix hm = matmul(g.H, mu[i]);
        for (int a = 0; a < nx; ++a) mean((i - 1) * nx + a, 0) = hm(a, 0);
        for (int j = 1; j <= N; ++j) {
            Matrix blk = matmul_nt(matmul(g.H, P[i][j]), g.H);
            if (i == j) blk = add(blk, g.R);
            for (int a = 0; a < nx; ++a)
                for (int b = 0; b < nx; ++b)
                    cov((i - 1) * nx + a, (j - 1) * nx + b) = blk(a, b);
        }
    }
    Matrix xflat(N * nx, 1);
    for (int n = 0; n < N; ++n)
        for (int a = 0; a < nx; ++a) xflat(n * nx + a, 0) = x_seq(n, a);
    Matrix d = sub(xflat, mean);
    CholFactor f = cholesky(symmetrize(cov));
    Matrix sol = chol_solve(f, d);
    return -0.5 * (f.logdet() + dot(d, sol) +
                   N * nx * 1.8378770664093454835606594728112);
}

// Dense Gauss-Legendre (16 points per element) reference for the forcing
// covariance entries, wrapped squared-exponential kernel.
inline double forcing_cov_entry_oracle(int n_u, double s_min, double s_max, double rho,
                                       double ell, int i, int j) {
    static const double gl16_x[16] = {
        -0.9894009349916499, -0.9445750230732326, -0.8656312023878318, -0.7554044083550030,
        -0.6178762444026438, -0.4580167776572274, -0.2816035507792589, -0.0950125098376374,
        0.0950125098376374,  0.2816035507792589,  0.4580167776572274,  0.6178762444026438,
        0.7554044083550030,  0.8656312023878318,  0.9445750230732326,  0.9894009349916499};
    static const double gl16_w[16] = {
        0.0271524594117541, 0.0622535239386479, 0.0951585116824928, 0.1246289712555339,
        0.1495959888165767, 0.1691565193950025, 0.1826034150449236, 0.1894506104550685,
        0.1894506104550685, 0.1826034150449236, 0.1691565193950025, 0.1495959888165767,
        0.1246289712555339, 0.0951585116824928, 0.0622535239386479, 0.0271524594117541};
    const double L = s_max - s_min;
    const double h = L / n_u;
    auto kernel = [&](double s, double sp) {
        double d = std::fabs(s - sp);
        d = std::min(d, L - d);
        return rho * rho * std::exp(-d * d / (2.0 * ell * ell));
    };
    // hat function phi_i supported on elements i-1 and i
    auto hat = [&](int node, double s) {
        double left = s_min + ((node - 1 + n_u) % n_u) * h;
        // position relative to node, accounting for wrap
        double d = s - (s_min + node * h);
        d = std::fmod(d + 1.5 * L, L) - 0.5 * L;
        (void)left;
        const double a = std::fabs(d) / h;
        return a < 1.0 ? 1.0 - a : 0.0;
    };
    double acc = 0.0;
    for (int ei = 0; ei < n_u; ++ei) {
        for (int ej = 0; ej < n_u; ++ej) {
            for (int a = 0; a < 16; ++a) {
                const double s = s_min + (ei + 0.5 * (gl16_x[a] + 1.0)) * h;
                const double phi_i = hat(i, s);
                if (phi_i == 0.0) continue;
                for (int b = 0; b < 16; ++b) {
                    const double sp = s_min + (ej + 0.5 * (gl16_x[b] + 1.0)) * h;
                    const double phi_j = hat(j, sp);
                    if (phi_j == 0.0) continue;
                    acc += gl16_w[a] * gl16_w[b] * 0.25 * h * h * kernel(s, sp) * phi_i * phi_j;
                }
            }
        }
    }
    return acc;
}

} // namespace dvae::test

#endif
