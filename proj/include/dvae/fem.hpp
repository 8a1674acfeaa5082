#ifndef DVAE_FEM_HPP
#define DVAE_FEM_HPP

#include <functional>
#include <optional>

#include "dvae/matrix.hpp"
#include "dvae/mesh.hpp"

namespace dvae::fem {

/// Nonlinear form evaluators: F(u) and its Jacobian J_F(u).
struct NonlinearForm {
    std::function<Matrix(const Matrix&)> F;
    std::function<Matrix(const Matrix&)> JF;
};

/// Operators of one spatially discretized latent model. M is SPD, G is
/// symmetric PSD, H rows are interpolation weights summing to one.
struct AssembledSystem {
    Matrix M;
    Matrix A;
    Matrix b;
    Matrix G;
    std::optional<NonlinearForm> nonlinear;
    Matrix H;
    Matrix R;
};

/// Mass matrix of C0 linear hat elements on a uniform periodic mesh:
/// circulant tridiagonal with 2h/3 on the diagonal and h/6 off it.
Matrix assemble_mass(const Mesh1D& mesh);

/// A_ij = c <d/ds phi_j, phi_i>: skew-symmetric circulant, entries +-c/2.
Matrix assemble_advection(const Mesh1D& mesh, double c);

struct KdvOperators {
    Matrix A_disp;       // dispersion beta * d^3/ds^3, mass-scaled 5-point stencil
    NonlinearForm conv;  // alpha <u_h d/ds u_h, phi_j> and its exact Jacobian
};
KdvOperators assemble_kdv(const Mesh1D& mesh, double alpha, double beta);

// Convection form with unit coefficient, exposed separately so parameter-
// affine models can scale it on the fly.
Matrix kdv_convection(const Mesh1D& mesh, const Matrix& u);
Matrix kdv_convection_jac(const Mesh1D& mesh, const Matrix& u);
// gradient of <Adj, J_conv(u)> with respect to u (J_conv is linear in u)
Matrix kdv_convection_jac_contract(const Mesh1D& mesh, const Matrix& adj);

/// G_ij = <phi_i, <k(.,.), phi_j>> for the squared-exponential kernel
/// k(s,s') = rho^2 exp(-d(s,s')^2 / (2 ell^2)), with the distance wrapped on
/// periodic domains. Fixed-order (4-point) Gauss-Legendre per element pair.
Matrix assemble_forcing_cov(const Mesh1D& mesh, double rho, double ell);

/// Interpolation operator: row j holds the two hat weights reproducing
/// u_h(obs_point_j). Points are wrapped mod the period on periodic meshes.
Matrix interp_operator(const Mesh1D& mesh, const Matrix& obs_points);

/// Uniform observation grid of n_x points over the mesh domain.
Matrix uniform_obs_points(const Mesh1D& mesh, int n_x);

} // namespace dvae::fem

#endif
