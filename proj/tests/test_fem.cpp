#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvae/fem.hpp"
#include "dvae/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace dvae;
using test::min_eigenvalue;
using test::rel_err_all;

namespace {
Mesh1D unit_mesh(int n) { return Mesh1D{n, 0.0, 1.0, true}; }

Matrix cyclic_permutation(int n, int shift) {
    Matrix p(n, n);
    for (int i = 0; i < n; ++i) p((i + shift) % n, i) = 1.0;
    return p;
}
} // namespace

TEST_CASE("mass matrix entries, row sums, SPD") {
    for (int n : {3, 8, 17}) {
        Mesh1D mesh = unit_mesh(n);
        const double h = mesh.h();
        Matrix m = fem::assemble_mass(mesh);
        for (int i = 0; i < n; ++i) {
            CHECK(m(i, i) == doctest::Approx(2.0 * h / 3.0).epsilon(1e-14));
            CHECK(m(i, (i + 1) % n) == doctest::Approx(h / 6.0).epsilon(1e-14));
            CHECK(m(i, (i + n - 1) % n) == doctest::Approx(h / 6.0).epsilon(1e-14));
            double row = 0.0;
            for (int j = 0; j < n; ++j) row += m(i, j);
            CHECK(row == doctest::Approx(h).epsilon(1e-13));
        }
    }
    Matrix m8 = fem::assemble_mass(unit_mesh(8));
    CHECK(rel_err_all(m8, transpose(m8)) == 0.0);
    CHECK(min_eigenvalue(m8) > 0.0);

    CHECK_THROWS_AS(fem::assemble_mass(unit_mesh(2)), config_error);
    Mesh1D nonper{8, 0.0, 1.0, false};
    CHECK_THROWS_AS(fem::assemble_mass(nonper), config_error);
}

TEST_CASE("advection matrix: zero c, zero row sums, explicit 4x4 entries") {
    Mesh1D mesh = unit_mesh(8);
    CHECK(max_abs(fem::assemble_advection(mesh, 0.0)) == 0.0);

    Matrix a = fem::assemble_advection(mesh, 0.7);
    for (int i = 0; i < 8; ++i) {
        double row = 0.0;
        for (int j = 0; j < 8; ++j) row += a(i, j);
        CHECK(row == doctest::Approx(0.0).epsilon(1e-15));
    }
    // skew symmetry
    CHECK(max_abs(add(a, transpose(a))) == doctest::Approx(0.0));

    Matrix a4 = fem::assemble_advection(unit_mesh(4), 1.0);
    for (int i = 0; i < 4; ++i) {
        CHECK(a4(i, (i + 1) % 4) == doctest::Approx(0.5));
        CHECK(a4(i, (i + 3) % 4) == doctest::Approx(-0.5));
        CHECK(a4(i, i) == doctest::Approx(0.0));
    }

    Mesh1D nonper{8, 0.0, 1.0, false};
    CHECK_THROWS_AS(fem::assemble_advection(nonper, 1.0), config_error);
}

TEST_CASE("kdv operators: F(const)=0, dispersion annihilates constants, exact Jacobian") {
    Mesh1D mesh{8, 0.0, 2.0, true};
    fem::KdvOperators ops = fem::assemble_kdv(mesh, 1.3, 0.5);

    Matrix c = Matrix::filled(8, 1, 2.7);
    CHECK(max_abs(ops.conv.F(c)) == doctest::Approx(0.0));
    CHECK(max_abs(matmul(ops.A_disp, c)) == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(max_abs(add(ops.A_disp, transpose(ops.A_disp))) == doctest::Approx(0.0));

    Rng rng(42);
    Matrix u = rng.normal_matrix(8, 1);
    Matrix jac = ops.conv.JF(u);
    Matrix jac_fd(8, 8);
    const double step = 1e-6;
    for (int k = 0; k < 8; ++k) {
        Matrix up = u, um = u;
        up(k, 0) += step;
        um(k, 0) -= step;
        Matrix fp = ops.conv.F(up), fm = ops.conv.F(um);
        for (int i = 0; i < 8; ++i) jac_fd(i, k) = (fp(i, 0) - fm(i, 0)) / (2.0 * step);
    }
    CHECK(rel_err_all(jac, jac_fd) < 1e-6);

    // conservation identity of the convection form: u^T F(u) = 0
    CHECK(std::fabs(dot(u, ops.conv.F(u))) < 1e-14);

    // JF_contract is the exact u-gradient of <Adj, JF(u)>
    Matrix adj = rng.normal_matrix(8, 8);
    Matrix g = fem::kdv_convection_jac_contract(mesh, adj);
    auto fval = [&](const Matrix& uu) { return dot(adj, fem::kdv_convection_jac(mesh, uu)); };
    CHECK(rel_err_all(g, test::fd_gradient_matrix(fval, u)) < 1e-6);

    CHECK_THROWS_AS(fem::assemble_kdv(Mesh1D{4, 0.0, 2.0, true}, 1.0, 1.0), config_error);
    CHECK_THROWS_AS(fem::assemble_kdv(mesh, 1.0, -0.1), config_error);
}

TEST_CASE("forcing covariance: zero rho, symmetry, PSD, quadrature oracle") {
    Mesh1D mesh = unit_mesh(16);
    CHECK(max_abs(fem::assemble_forcing_cov(mesh, 0.0, 0.1)) == 0.0);
    CHECK_THROWS_AS(fem::assemble_forcing_cov(mesh, 0.02, 0.0), config_error);

    Matrix g = fem::assemble_forcing_cov(mesh, 0.02, 0.1);
    CHECK(rel_err_all(g, transpose(g)) == 0.0);
    CHECK(min_eigenvalue(g) >= -1e-12);

    Mesh1D mesh64 = unit_mesh(64);
    Matrix g64 = fem::assemble_forcing_cov(mesh64, 0.02, 0.1);
    const double oracle = test::forcing_cov_entry_oracle(64, 0.0, 1.0, 0.02, 0.1, 3, 3);
    CHECK(test::rel_err(g64(3, 3), oracle) < 1e-4);
    const double oracle_off = test::forcing_cov_entry_oracle(64, 0.0, 1.0, 0.02, 0.1, 3, 7);
    CHECK(test::rel_err(g64(3, 7), oracle_off) < 1e-4);
}

TEST_CASE("assembled operators are circulant (cyclic relabeling invariance)") {
    Mesh1D mesh = unit_mesh(12);
    Matrix p = cyclic_permutation(12, 5);
    auto invariant = [&](const Matrix& a) {
        return max_abs(sub(matmul_nt(matmul(p, a), p), a));
    };
    CHECK(invariant(fem::assemble_mass(mesh)) < 1e-15);
    CHECK(invariant(fem::assemble_advection(mesh, 0.8)) < 1e-15);
    CHECK(invariant(fem::assemble_kdv(mesh, 1.0, 0.3).A_disp) < 1e-9);
    CHECK(invariant(fem::assemble_forcing_cov(mesh, 0.05, 0.15)) < 1e-15);
}

TEST_CASE("interpolation operator: unit rows, midpoints, linear exactness, convexity") {
    Mesh1D mesh = unit_mesh(10);
    const double h = mesh.h();

    Matrix at_node = fem::interp_operator(mesh, Matrix(1, 1, {3 * h}));
    for (int j = 0; j < 10; ++j)
        CHECK(at_node(0, j) == doctest::Approx(j == 3 ? 1.0 : 0.0));

    Matrix mid = fem::interp_operator(mesh, Matrix(1, 1, {3.5 * h}));
    CHECK(mid(0, 3) == doctest::Approx(0.5));
    CHECK(mid(0, 4) == doctest::Approx(0.5));

    // linear exactness away from the periodic seam
    Matrix pts(5, 1, {0.11, 0.27, 0.42, 0.63, 0.89});
    Matrix H = fem::interp_operator(mesh, pts);
    Matrix coords(10, 1);
    for (int j = 0; j < 10; ++j) coords(j, 0) = mesh.node(j);
    Matrix interp = matmul(H, coords);
    for (int r = 0; r < 5; ++r) CHECK(interp(r, 0) == doctest::Approx(pts(r, 0)).epsilon(1e-12));

    // rows are convex combinations
    Rng rng(9);
    Matrix rpts(20, 1);
    for (int r = 0; r < 20; ++r) rpts(r, 0) = rng.uniform(-2.0, 3.0);  // wraps mod period
    Matrix Hr = fem::interp_operator(mesh, rpts);
    for (int r = 0; r < 20; ++r) {
        double s = 0.0;
        for (int j = 0; j < 10; ++j) {
            CHECK(Hr(r, j) >= 0.0);
            s += Hr(r, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    Mesh1D nonper{10, 0.0, 1.0, false};
    CHECK_THROWS_AS(fem::interp_operator(nonper, Matrix(1, 1, {1.4})), config_error);
}
