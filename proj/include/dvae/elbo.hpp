#ifndef DVAE_ELBO_HPP
#define DVAE_ELBO_HPP

#include <functional>

#include "dvae/codec.hpp"
#include "dvae/filter.hpp"
#include "dvae/matrix.hpp"
#include "dvae/paramset.hpp"
#include "dvae/rng.hpp"

namespace dvae::elbo {

/// Diagonal-Gaussian variational posterior over the free physical
/// parameters. sigma = exp(log_sigma).
struct VariationalLambda {
    Matrix mu;         // n_free x 1
    Matrix log_sigma;  // n_free x 1
};

/// KL( N(mu_q, diag sigma_q^2) || N(mu0, diag var0) ), analytic.
double kl_gaussian_diag(const Matrix& mu_q, const Matrix& sigma_q, const Matrix& mu0,
                        const Matrix& var0);
ad::Var kl_gaussian_diag_node(ad::Tape& tape, ad::Var mu_q, ad::Var log_sigma_q,
                              const Matrix& mu0, const Matrix& var0);

/// Monte-Carlo KL estimate E_q[log q - log p] for a non-Gaussian prior,
/// with reparameterized samples lambda = mu + sigma eps.
double mc_kl(const VariationalLambda& q, const std::function<double(const Matrix&)>& prior_logpdf,
             int n_samples, Rng& rng);

enum class DecoderKind { Bernoulli, Gaussian, Linear };

/// Everything the objective needs besides the trainable parameters.
/// The referenced transition model must outlive evaluations.
struct ObjectiveSpec {
    const dyn::TransitionModel* model = nullptr;
    Matrix H, R;
    filt::GaussianState prior_u0;
    int stride = 1;
    dyn::ModelParams lambda;  // values of fixed entries; prior for free ones
    int m_lambda = 4;

    DecoderKind decoder = DecoderKind::Bernoulli;
    codec::MlpSpec enc, dec;  // ignored for the linear decoder
    double eta = 0.005;       // Gaussian / linear observation scale
    int n_x = 0;

    Matrix Y;  // N x n_y observations
};

struct ElboTerms {
    double recon = 0.0;      // log p(y | x)
    double logq = 0.0;       // log q(x | y)
    double filter_ll = 0.0;  // E_q_lambda log p(x | lambda), MC average
    double kl = 0.0;         // KL(q_lambda || p(lambda)), 0 without free params
    double elbo = 0.0;
};

struct ElboEval {
    ElboTerms terms;
    ParamSet grads;
};

/// Single-sample reparameterized ELBO with m_lambda parameter samples.
/// Deterministic given (params, spec, rng state). Gradients cover every
/// slot in params. Trainable slots: the codec networks (or `dec.w`) plus,
/// with free physical parameters, `lambda.mu` and `lambda.log_sigma`.
ElboEval elbo_eval(const ParamSet& params, const ObjectiveSpec& spec, Rng& rng,
                   bool want_grads = true);

/// Deterministic mean-encoding reconstruction (N x n_y), used for metrics.
Matrix reconstruct_mean(const ParamSet& params, const ObjectiveSpec& spec);

/// One reparameterized encoding sample x_{1:N} (N x n_x), forward only.
Matrix sample_encoding(const ParamSet& params, const ObjectiveSpec& spec, Rng& rng);

/// Decoder mean for a given encoding sequence (N x n_x) -> (N x n_y).
Matrix decode_mean(const ParamSet& params, const ObjectiveSpec& spec, const Matrix& x_seq);

/// Normalized MSE: sum_n |yhat_n - yref_n|^2 / sum_n |yref_n|^2.
double nmse(const Matrix& yhat, const Matrix& yref);

/// Initial trainable ParamSet for a spec (codec weights; variational
/// lambda initialized at the prior).
ParamSet init_params(const ObjectiveSpec& spec, Rng& rng);

} // namespace dvae::elbo

#endif
