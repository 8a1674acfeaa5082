#include "dvae/fem.hpp"

#include <cmath>

namespace dvae::fem {

namespace {
void require_periodic(const Mesh1D& mesh, const char* what) {
    mesh.validate();
    if (!mesh.periodic)
        throw config_error(std::string(what) + ": only periodic meshes are supported");
}

// 4-point Gauss-Legendre on [-1, 1]
constexpr double kGlNode[4] = {-0.8611363115940526, -0.3399810435848563,
                               0.3399810435848563, 0.8611363115940526};
constexpr double kGlWeight[4] = {0.3478548451374538, 0.6521451548625461,
                                 0.6521451548625461, 0.3478548451374538};
} // namespace

Matrix assemble_mass(const Mesh1D& mesh) {
    require_periodic(mesh, "assemble_mass");
    const int n = mesh.n_u;
    if (n < 3) throw config_error("assemble_mass: mesh too small (n_u >= 3 required)");
    const double h = mesh.h();
    Matrix m(n, n);
    for (int i = 0; i < n; ++i) {
        m(i, i) = 2.0 * h / 3.0;
        m(i, (i + 1) % n) = h / 6.0;
        m(i, (i + n - 1) % n) = h / 6.0;
    }
    return m;
}

Matrix assemble_advection(const Mesh1D& mesh, double c) {
    mesh.validate();
    if (!mesh.periodic)
        throw config_error("assemble_advection: unsupported boundary (periodic only)");
    const int n = mesh.n_u;
    if (n < 3) throw config_error("assemble_advection: mesh too small");
    Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
        a(i, (i + 1) % n) = 0.5 * c;
        a(i, (i + n - 1) % n) = -0.5 * c;
    }
    return a;
}

KdvOperators assemble_kdv(const Mesh1D& mesh, double alpha, double beta) {
    require_periodic(mesh, "assemble_kdv");
    const int n = mesh.n_u;
    if (n < 5) throw config_error("assemble_kdv: stencil needs n_u >= 5");
    if (beta < 0.0) throw config_error("assemble_kdv: beta must be >= 0");
    const double h = mesh.h();
    // beta * d^3/ds^3 as the central 5-point stencil scaled by h (consistent
    // with the tridiagonal mass acting as ~h on smooth vectors)
    const double c1 = beta / (h * h);        // +-2 coefficient / (2 h^2)
    const double c2 = beta / (2.0 * h * h);  // +-1 coefficient / (2 h^2)
    Matrix a(n, n);
    for (int i = 0; i < n; ++i) {
        a(i, (i + n - 2) % n) -= c2;
        a(i, (i + n - 1) % n) += c1;
        a(i, (i + 1) % n) -= c1;
        a(i, (i + 2) % n) += c2;
    }
    KdvOperators ops;
    ops.A_disp = std::move(a);
    Mesh1D mcopy = mesh;
    ops.conv.F = [mcopy, alpha](const Matrix& u) {
        return scale(kdv_convection(mcopy, u), alpha);
    };
    ops.conv.JF = [mcopy, alpha](const Matrix& u) {
        return scale(kdv_convection_jac(mcopy, u), alpha);
    };
    return ops;
}

// Exact element integrals of u_h u_h' phi_j for piecewise-linear u_h:
// on element (i, i+1), the two local contributions are
//   (u_{i+1}-u_i) (u_i/3 + u_{i+1}/6)  to node i,
//   (u_{i+1}-u_i) (u_i/6 + u_{i+1}/3)  to node i+1.
Matrix kdv_convection(const Mesh1D& mesh, const Matrix& u) {
    const int n = mesh.n_u;
    if (u.rows() != n || u.cols() != 1) throw dim_error("kdv_convection: u must be n_u x 1");
    Matrix f(n, 1);
    for (int i = 0; i < n; ++i) {
        const int ip = (i + 1) % n;
        const double du = u(ip, 0) - u(i, 0);
        f(i, 0) += du * (u(i, 0) / 3.0 + u(ip, 0) / 6.0);
        f(ip, 0) += du * (u(i, 0) / 6.0 + u(ip, 0) / 3.0);
    }
    return f;
}

Matrix kdv_convection_jac(const Mesh1D& mesh, const Matrix& u) {
    const int n = mesh.n_u;
    if (u.rows() != n || u.cols() != 1) throw dim_error("kdv_convection_jac: u must be n_u x 1");
    Matrix j(n, n);
    for (int i = 0; i < n; ++i) {
        const int im = (i + n - 1) % n;
        const int ip = (i + 1) % n;
        j(i, im) += -(2.0 * u(im, 0) + u(i, 0)) / 6.0;
        j(i, i) += (u(ip, 0) - u(im, 0)) / 6.0;
        j(i, ip) += (u(i, 0) + 2.0 * u(ip, 0)) / 6.0;
    }
    return j;
}

Matrix kdv_convection_jac_contract(const Mesh1D& mesh, const Matrix& adj) {
    const int n = mesh.n_u;
    if (adj.rows() != n || adj.cols() != n)
        throw dim_error("kdv_convection_jac_contract: adjoint must be n_u x n_u");
    Matrix g(n, 1);
    for (int m = 0; m < n; ++m) {
        const int mm = (m + n - 1) % n;
        const int mp = (m + 1) % n;
        g(m, 0) = (-2.0 * adj(mp, m) - adj(mp, mp) - adj(m, mm) + adj(m, mp) + adj(mm, mm) +
                   2.0 * adj(mm, m)) /
                  6.0;
    }
    return g;
}

Matrix assemble_forcing_cov(const Mesh1D& mesh, double rho, double ell) {
    require_periodic(mesh, "assemble_forcing_cov");
    if (ell <= 0.0) throw config_error("assemble_forcing_cov: ell must be > 0");
    if (rho < 0.0) throw config_error("assemble_forcing_cov: rho must be >= 0");
    const int n = mesh.n_u;
    const double h = mesh.h();
    const double L = mesh.length();
    if (rho == 0.0) return Matrix(n, n);

    // quadrature points, sqrt-weighted basis evaluations
    const int nq = 4 * n;
    std::vector<double> qs(nq);
    // B[q][0], B[q][1]: weights of nodes e and e+1 at point q of element e
    std::vector<double> b0(nq), b1(nq);
    for (int e = 0; e < n; ++e) {
        const double a = mesh.node(e);
        for (int g = 0; g < 4; ++g) {
            const int q = 4 * e + g;
            const double t = 0.5 * (kGlNode[g] + 1.0);
            qs[q] = a + t * h;
            const double w = kGlWeight[g] * 0.5 * h;
            b0[q] = w * (1.0 - t);
            b1[q] = w * t;
        }
    }
    // T = K B, exploiting that column j of B is supported on elements j-1, j
    const double inv2l2 = 1.0 / (2.0 * ell * ell);
    const double r2 = rho * rho;
    Matrix T(nq, n);
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (int q = 0; q < nq; ++q) {
        for (int j = 0; j < n; ++j) {
            const int e_left = (j + n - 1) % n;
            double acc = 0.0;
            for (int g = 0; g < 4; ++g) {
                const int ql = 4 * e_left + g;
                double d = std::fabs(qs[q] - qs[ql]);
                d = std::min(d, L - d);
                acc += r2 * std::exp(-d * d * inv2l2) * b1[ql];
                const int qr = 4 * j + g;
                d = std::fabs(qs[q] - qs[qr]);
                d = std::min(d, L - d);
                acc += r2 * std::exp(-d * d * inv2l2) * b0[qr];
            }
            T(q, j) = acc;
        }
    }
    Matrix G(n, n);
    for (int i = 0; i < n; ++i) {
        const int e_left = (i + n - 1) % n;
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int g = 0; g < 4; ++g) {
                acc += b1[4 * e_left + g] * T(4 * e_left + g, j);
                acc += b0[4 * i + g] * T(4 * i + g, j);
            }
            G(i, j) = acc;
        }
    }
    return symmetrize(G);
}

Matrix interp_operator(const Mesh1D& mesh, const Matrix& obs_points) {
    mesh.validate();
    const int n = mesh.n_u;
    const int m = static_cast<int>(obs_points.size());
    const double h = mesh.h();
    const double L = mesh.length();
    Matrix H(m, n);
    for (int r = 0; r < m; ++r) {
        double s = obs_points[r];
        if (mesh.periodic) {
            s = std::fmod(s - mesh.s_min, L);
            if (s < 0) s += L;
        } else {
            const double span = (n - 1) * h;
            if (s < mesh.s_min - 1e-12 || s > mesh.s_min + span + 1e-12)
                throw config_error("interp_operator: point outside non-periodic domain");
            s = std::min(std::max(s - mesh.s_min, 0.0), span);
        }
        int e = static_cast<int>(std::floor(s / h));
        if (e >= n) e = n - 1;
        if (!mesh.periodic && e >= n - 1) e = n - 2;
        double t = s / h - e;
        if (t < 0) t = 0;
        if (t > 1) t = 1;
        const int j0 = e % n;
        const int j1 = (e + 1) % n;
        H(r, j0) += 1.0 - t;
        H(r, j1) += t;
    }
    return H;
}

Matrix uniform_obs_points(const Mesh1D& mesh, int n_x) {
    if (n_x < 1) throw config_error("uniform_obs_points: n_x must be >= 1");
    Matrix pts(n_x, 1);
    if (mesh.periodic) {
        const double step = mesh.length() / n_x;
        for (int i = 0; i < n_x; ++i) pts(i, 0) = mesh.s_min + i * step;
    } else {
        const double step = (n_x > 1) ? mesh.length() / (n_x - 1) : 0.0;
        for (int i = 0; i < n_x; ++i) pts(i, 0) = mesh.s_min + i * step;
    }
    return pts;
}

} // namespace dvae::fem
