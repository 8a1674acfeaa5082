#ifndef DVAE_FILTER_HPP
#define DVAE_FILTER_HPP

#include <vector>

#include "dvae/dynamics.hpp"
#include "dvae/matrix.hpp"
#include "dvae/tape.hpp"

namespace dvae::filt {

struct GaussianState {
    Matrix m;  // n_u x 1
    Matrix C;  // n_u x n_u, kept symmetric by construction
};

struct FilterResult {
    std::vector<GaussianState> states;     // posterior per observation index
    std::vector<GaussianState> predicted;  // one-step-ahead per observation index
    double loglik = 0.0;
};

/// Uniformly weighted Gaussian mixture (Monte-Carlo marginal posterior).
struct MixturePosterior {
    std::vector<GaussianState> components;
    double weight() const { return components.empty() ? 0.0 : 1.0 / components.size(); }
    Matrix mean() const;
    Matrix sd() const;  // per-coordinate mixture standard deviation
};

/// One ExKF prediction: Newton mean solve (or explicit step) plus the
/// tangent-linear covariance update through the residual Jacobians.
GaussianState predict(const GaussianState& state, const dyn::TransitionModel& model,
                      const dyn::ModelParams& params, int step_index = -1);

/// Kalman update; returns the posterior and the innovation log-density.
std::pair<GaussianState, double> update(const GaussianState& pred, const Matrix& x_n,
                                        const Matrix& H, const Matrix& R);

/// Sequential filter over x_seq (N x n_x). Each observation is preceded by
/// `stride` prediction sub-steps of length model.dt.
FilterResult run_filter(const dyn::TransitionModel& model, const dyn::ModelParams& params,
                        const Matrix& x_seq, const Matrix& H, const Matrix& R,
                        const GaussianState& prior, int stride = 1);

/// Monte-Carlo marginalization over encoder samples: per time step, the
/// mixture of the per-sample filtering Gaussians.
std::vector<MixturePosterior> marginal_filter_encoder(
    const dyn::TransitionModel& model, const dyn::ModelParams& params,
    const std::vector<Matrix>& x_samples, const Matrix& H, const Matrix& R,
    const GaussianState& prior, int stride = 1);

/// Joint marginalization over encoder and parameter samples
/// (M_x * M_lambda mixture components per time step).
std::vector<MixturePosterior> marginal_filter_joint(
    const dyn::TransitionModel& model, const dyn::ModelParams& params,
    const std::vector<Matrix>& x_samples, const std::vector<Matrix>& lambda_samples,
    const Matrix& H, const Matrix& R, const GaussianState& prior, int stride = 1);

// -- differentiable path -------------------------------------------------------

/// Free-parameter binding: values carries the full lambda vector; entries in
/// free_idx additionally have 1x1 tape nodes through which gradients flow.
struct LambdaBinding {
    Matrix values;
    std::vector<int> free_idx;
    std::vector<ad::Var> free_vars;
};

struct FilterGraph {
    ad::Var loglik;
};

/// Records log p(x_{1:N} | lambda) on the tape, differentiable w.r.t. the
/// x-sequence node and the free lambda nodes. Gradient flows through every
/// prediction and update, including the Newton mean solves (implicit function
/// theorem) and the Jacobian dependence on state and parameters. For linear
/// systems with no free parameters the covariance recursion is precomputed
/// off-tape (it is state- and data-independent there), which leaves only the
/// mean recursion on tape.
FilterGraph build_filter(ad::Tape& tape, const dyn::TransitionModel& model,
                         const LambdaBinding& lambda, ad::Var x_seq, const Matrix& H,
                         const Matrix& R, const GaussianState& prior, int stride = 1);

/// Off-tape covariance/gain cache for linear systems with fixed parameters.
struct LinearFilterCache {
    Matrix P;  // stride-composed mean propagator
    Matrix c;  // stride-composed constant mean increment (zero when b = 0)
    std::vector<Matrix> S_inv;
    std::vector<double> logdet_S;
    std::vector<Matrix> K;
    std::vector<GaussianState> predicted, states;  // covariance-only entries
};
LinearFilterCache build_linear_cache(const dyn::TransitionModel& model, const Matrix& lambda,
                                     const Matrix& H, const Matrix& R,
                                     const GaussianState& prior, int stride, int n_obs);

} // namespace dvae::filt

#endif
