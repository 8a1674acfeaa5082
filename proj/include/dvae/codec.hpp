#ifndef DVAE_CODEC_HPP
#define DVAE_CODEC_HPP

#include <string>
#include <utility>

#include "dvae/matrix.hpp"
#include "dvae/paramset.hpp"
#include "dvae/rng.hpp"
#include "dvae/tape.hpp"

namespace dvae::codec {

/// Two-hidden-layer LeakyReLU MLP. Encoders carry a second head emitting
/// log standard deviations. Parameters live in a ParamSet under
/// `<prefix>.W1, <prefix>.b1, <prefix>.W2, <prefix>.b2, <prefix>.Wmu,
/// <prefix>.bmu` and, with a log-scale head, `<prefix>.Wsig, <prefix>.bsig`.
struct MlpSpec {
    int in = 0;
    int hidden = 128;
    int out = 0;
    double leaky_slope = 0.01;
    bool log_scale_head = false;
    std::string prefix;
};

/// Xavier-uniform weights, zero biases; the log-scale head bias starts at -1.
void add_mlp_params(ParamSet& params, const MlpSpec& spec, Rng& rng);

struct MlpHeads {
    ad::Var mu;
    ad::Var log_sigma;  // invalid unless spec.log_scale_head
};

/// Batched forward pass: rows of `input` (N x in) are independent frames.
MlpHeads mlp_forward(ad::Tape& tape, const MlpSpec& spec, const BoundParams& bound,
                     ad::Var input);

/// q(x|y) = N(mu(y), diag sigma(y)^2) for a single frame; sigma is the
/// exponentiated log-scale head. Throws numeric_error on non-finite output.
std::pair<Matrix, Matrix> encode(const Matrix& y, const MlpSpec& spec, const ParamSet& params);

/// mu + sigma . eps
Matrix reparam_sample(const Matrix& mu, const Matrix& sigma, const Matrix& eps);
ad::Var reparam_sample(ad::Var mu, ad::Var sigma, ad::Var eps);

/// Bernoulli decoder probabilities in (0,1) via the logistic squash.
Matrix decode_bernoulli(const Matrix& x, const MlpSpec& spec, const ParamSet& params);

/// Gaussian decoder: mean head plus fixed isotropic variance eta^2.
std::pair<Matrix, double> decode_gaussian(const Matrix& x, const MlpSpec& spec,
                                          const ParamSet& params, double eta);

/// Linear decoder p(y|x) = N(w x, eta^2 I) with tied pseudo-inverse encoder.
struct LinearDecoder {
    Matrix w;  // n_y x n_x
    double eta = 0.005;
};

/// q(x|y) = N((w^T w)^-1 w^T y, eta^2 (w^T w)^-1)
std::pair<Matrix, Matrix> pinv_encode(const Matrix& y, const LinearDecoder& dec);

// probability clamp applied before Bernoulli logs
constexpr double kProbEps = 1e-7;

/// sum_n [ y log p + (1-y) log(1-p) ] with probabilities clamped away from 0/1
ad::Var bernoulli_loglik(ad::Tape& tape, ad::Var probs, ad::Var y);

/// isotropic Gaussian log-likelihood of y (N x n_y) under mean (N x n_y)
ad::Var gaussian_loglik(ad::Tape& tape, ad::Var mean, ad::Var y, double eta);

/// sum_n log N(x_n; mu_n, diag sigma_n^2), all arguments N x n_x
ad::Var gaussian_logq_diag(ad::Tape& tape, ad::Var x, ad::Var mu, ad::Var log_sigma);

} // namespace dvae::codec

#endif
