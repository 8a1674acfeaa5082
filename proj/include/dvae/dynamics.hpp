#ifndef DVAE_DYNAMICS_HPP
#define DVAE_DYNAMICS_HPP

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "dvae/fem.hpp"
#include "dvae/matrix.hpp"
#include "dvae/mesh.hpp"

namespace dvae::dyn {

enum class Scheme { ExplicitEM, ImplicitEuler, CrankNicolson };

/// Physical parameters Lambda with Gaussian prior; fixed entries (mask 0)
/// are never updated and carry no variational posterior.
struct ModelParams {
    Matrix values;        // n_lambda x 1
    Matrix prior_mean;    // n_lambda x 1
    Matrix prior_var;     // n_lambda x 1, elementwise > 0
    std::vector<std::uint8_t> free_mask;

    int n_lambda() const { return static_cast<int>(values.size()); }
    int n_free() const;
    std::vector<int> free_indices() const;
    void validate() const;
};

/// One nonlinear term of the state equation together with its exact
/// Jacobian and the u-gradient of <Adj, JF(u)> (used by reverse mode).
struct NonlinBasis {
    std::function<Matrix(const Matrix&)> F;
    std::function<Matrix(const Matrix&)> JF;
    std::function<Matrix(const Matrix&, const Matrix&)> JF_contract;
};

/// Semi-discrete system M du + (A0 + sum_k l_k Ak) u dt
///   + (F0(u) + sum_k l_k Fk(u)) dt = b dt + dW,  cov(dW) = G dt.
/// Both the linear operator and the nonlinear form are affine in the
/// physical parameters, which covers every latent model used here.
struct DynSystem {
    Matrix M;
    bool identity_mass = false;
    Matrix A0;                  // empty means zero
    std::vector<Matrix> Ak;     // per lambda entry; empty slots mean zero
    Matrix b;                   // empty means zero
    Matrix G;
    std::optional<NonlinBasis> F0;
    std::vector<std::optional<NonlinBasis>> Fk;
    int dim = 0;

    bool linear_in_state() const;
    Matrix A_of(const Matrix& lambda) const;
    Matrix F_of(const Matrix& u, const Matrix& lambda) const;
    Matrix JF_of(const Matrix& u, const Matrix& lambda) const;
    Matrix b_or_zero() const;
};

struct TransitionModel {
    DynSystem sys;
    Scheme scheme = Scheme::CrankNicolson;
    double dt = 0.01;
    void validate() const;
};

/// Scheme weights (c_n, c_prev) for the state the operators act on:
/// u* = c_n u_n + c_prev u_{n-1}.
std::pair<double, double> scheme_weights(Scheme s);

/// Explicit Euler-Maruyama transition moments: mean and per-step covariance
/// Q = dt M^-1 G M^-T.
std::pair<Matrix, Matrix> em_mean_cov(const Matrix& u_prev, const TransitionModel& model,
                                      const ModelParams& params);

/// Lorenz-63 drift for params (sigma, r, b).
Matrix lorenz_drift(const Matrix& u, const ModelParams& params);
Matrix lorenz_drift_jac(const Matrix& u, const ModelParams& params);

/// Time-step residual: zero exactly when (u_n, u_prev) is a deterministic
/// step. The stochastic step solves residual = e, e ~ N(0, dt G).
Matrix residual(const Matrix& u_n, const Matrix& u_prev, const TransitionModel& model,
                const ModelParams& params);

/// Exact Jacobians (d residual / d u_n, d residual / d u_prev).
std::pair<Matrix, Matrix> jacobians(const Matrix& u_n, const Matrix& u_prev,
                                    const TransitionModel& model, const ModelParams& params);

/// d residual / d lambda, one column per parameter (n_u x n_lambda).
Matrix residual_param_jac(const Matrix& u_n, const Matrix& u_prev,
                          const TransitionModel& model, const Matrix& lambda);

/// Newton solve of residual(u_n, u_prev) = rhs for u_n; rhs may be empty
/// (deterministic step). Throws divergence_error with the step index on
/// failure. If out_factor is non-null it receives the LU factor of J_n at
/// the solution along with the converged u*.
struct NewtonResult {
    Matrix u_n;
    Matrix u_star;      // scheme-weighted state at the solution
    LuFactor J_n_factor;
    int iterations = 0;
};
NewtonResult newton_step(const TransitionModel& model, const ModelParams& params,
                         const Matrix& u_prev, const Matrix& rhs, int step_index);

/// Forward SDE simulation; states row n is u(n dt), row 0 is u0.
/// noise_amp = 0 gives the deterministic integrator.
Matrix simulate(const TransitionModel& model, const ModelParams& params, const Matrix& u0,
                int n_steps, std::uint64_t seed, double noise_amp = 1.0);

// -- model factories ---------------------------------------------------------

/// Stochastic Lorenz-63: lambda = (sigma, r, b), G = noise_sd^2 I.
DynSystem make_lorenz_system(double noise_sd);

/// Advection on a periodic mesh: lambda = (c), statFEM operators, GP forcing.
DynSystem make_advection_system(const Mesh1D& mesh, double rho, double ell);

/// KdV on a periodic mesh: lambda = (alpha, beta).
DynSystem make_kdv_system(const Mesh1D& mesh, double rho, double ell);

} // namespace dvae::dyn

#endif
