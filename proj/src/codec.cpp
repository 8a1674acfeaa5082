#include "dvae/codec.hpp"

#include <cmath>

namespace dvae::codec {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;

Matrix xavier(Rng& rng, int rows, int cols) {
    const double a = std::sqrt(6.0 / (rows + cols));
    return rng.uniform_matrix(rows, cols, -a, a);
}
} // namespace

void add_mlp_params(ParamSet& params, const MlpSpec& spec, Rng& rng) {
    const std::string& p = spec.prefix;
    params.add(p + ".W1", xavier(rng, spec.hidden, spec.in));
    params.add(p + ".b1", Matrix(1, spec.hidden));
    params.add(p + ".W2", xavier(rng, spec.hidden, spec.hidden));
    params.add(p + ".b2", Matrix(1, spec.hidden));
    params.add(p + ".Wmu", xavier(rng, spec.out, spec.hidden));
    params.add(p + ".bmu", Matrix(1, spec.out));
    if (spec.log_scale_head) {
        // zero weights: the initial sigma is uniformly exp(-1). A spread-out
        // log-scale head puts early samples far outside the solvable regime
        // of the stiff latent models.
        params.add(p + ".Wsig", Matrix(spec.out, spec.hidden));
        params.add(p + ".bsig", Matrix::filled(1, spec.out, -1.0));
    }
}

MlpHeads mlp_forward(ad::Tape& tape, const MlpSpec& spec, const BoundParams& bound,
                     ad::Var input) {
    (void)tape;
    const std::string& p = spec.prefix;
    ad::Var h1 = ad::leaky_relu(
        ad::add_rowvec(ad::matmul_nt(input, bound.at(p + ".W1")), bound.at(p + ".b1")),
        spec.leaky_slope);
    ad::Var h2 = ad::leaky_relu(
        ad::add_rowvec(ad::matmul_nt(h1, bound.at(p + ".W2")), bound.at(p + ".b2")),
        spec.leaky_slope);
    MlpHeads heads;
    heads.mu = ad::add_rowvec(ad::matmul_nt(h2, bound.at(p + ".Wmu")), bound.at(p + ".bmu"));
    if (spec.log_scale_head)
        heads.log_sigma =
            ad::add_rowvec(ad::matmul_nt(h2, bound.at(p + ".Wsig")), bound.at(p + ".bsig"));
    return heads;
}

std::pair<Matrix, Matrix> encode(const Matrix& y, const MlpSpec& spec, const ParamSet& params) {
    if (!spec.log_scale_head) throw config_error("encode requires a log-scale head");
    if (y.size() != spec.in) throw dim_error("encode: input length != spec.in");
    ad::Tape tape;
    BoundParams bound = bind_inputs(tape, params);
    ad::Var row = tape.constant(y.rows() == 1 ? y : transpose(y));
    MlpHeads heads = mlp_forward(tape, spec, bound, row);
    Matrix mu = transpose(tape.value(heads.mu));
    Matrix sigma = transpose(tape.value(heads.log_sigma));
    for (long long i = 0; i < sigma.size(); ++i) sigma[i] = std::exp(sigma[i]);
    if (!mu.all_finite() || !sigma.all_finite())
        throw numeric_error("encoder produced non-finite output");
    return {mu, sigma};
}

Matrix reparam_sample(const Matrix& mu, const Matrix& sigma, const Matrix& eps) {
    if (!mu.same_shape(sigma) || !mu.same_shape(eps))
        throw dim_error("reparam_sample shape mismatch");
    Matrix x(mu.rows(), mu.cols());
    for (long long i = 0; i < x.size(); ++i) x[i] = mu[i] + sigma[i] * eps[i];
    return x;
}

ad::Var reparam_sample(ad::Var mu, ad::Var sigma, ad::Var eps) {
    return ad::add(mu, ad::hadamard(sigma, eps));
}

Matrix decode_bernoulli(const Matrix& x, const MlpSpec& spec, const ParamSet& params) {
    if (x.size() != spec.in) throw dim_error("decode_bernoulli: input length != spec.in");
    ad::Tape tape;
    BoundParams bound = bind_inputs(tape, params);
    ad::Var row = tape.constant(x.rows() == 1 ? x : transpose(x));
    MlpHeads heads = mlp_forward(tape, spec, bound, row);
    Matrix probs = transpose(tape.value(ad::sigmoid(heads.mu)));
    return probs;
}

std::pair<Matrix, double> decode_gaussian(const Matrix& x, const MlpSpec& spec,
                                          const ParamSet& params, double eta) {
    if (!(eta > 0.0)) throw config_error("decode_gaussian: eta must be > 0");
    ad::Tape tape;
    BoundParams bound = bind_inputs(tape, params);
    ad::Var row = tape.constant(x.rows() == 1 ? x : transpose(x));
    MlpHeads heads = mlp_forward(tape, spec, bound, row);
    return {transpose(tape.value(heads.mu)), eta * eta};
}

std::pair<Matrix, Matrix> pinv_encode(const Matrix& y, const LinearDecoder& dec) {
    if (y.rows() != dec.w.rows()) throw dim_error("pinv_encode: y length != decoder rows");
    Matrix wtw = matmul_tn(dec.w, dec.w);
    CholFactor f = cholesky(wtw);
    double dmin = f.L(0, 0), dmax = f.L(0, 0);
    for (int i = 1; i < f.L.rows(); ++i) {
        dmin = std::min(dmin, f.L(i, i));
        dmax = std::max(dmax, f.L(i, i));
    }
    // a pivot rescued by the factorization's 1e-10 diagonal jitter sits at a
    // relative scale of sqrt(1e-10) ~ 1e-5; anything down there is rank loss
    if (!(dmin > 3e-4 * dmax))
        throw numeric_error("pinv_encode: decoder weights are rank deficient");
    Matrix mu = chol_solve(f, matmul_tn(dec.w, y));
    Matrix cov = scale(chol_inverse(f), dec.eta * dec.eta);
    return {mu, symmetrize(cov)};
}

ad::Var bernoulli_loglik(ad::Tape& tape, ad::Var probs, ad::Var y) {
    ad::Var p = ad::clamp(probs, kProbEps, 1.0 - kProbEps);
    ad::Var one_minus_y = ad::add_const(ad::neg(y), 1.0);
    ad::Var one_minus_p = ad::add_const(ad::neg(p), 1.0);
    ad::Var ll = ad::add(ad::hadamard(y, ad::log(p)),
                         ad::hadamard(one_minus_y, ad::log(one_minus_p)));
    (void)tape;
    return ad::sum(ll);
}

ad::Var gaussian_loglik(ad::Tape& tape, ad::Var mean, ad::Var y, double eta) {
    const Matrix& mv = tape.value(mean);
    const double n_total = static_cast<double>(mv.rows()) * mv.cols();
    ad::Var ss = ad::sum_sq(ad::sub(y, mean));
    return ad::add_const(ad::scale(ss, -0.5 / (eta * eta)),
                         -0.5 * n_total * (kLog2Pi + 2.0 * std::log(eta)));
}

ad::Var gaussian_logq_diag(ad::Tape& tape, ad::Var x, ad::Var mu, ad::Var log_sigma) {
    const Matrix& xv = tape.value(x);
    const double n_total = static_cast<double>(xv.rows()) * xv.cols();
    ad::Var z = ad::div(ad::sub(x, mu), ad::exp(log_sigma));
    ad::Var quad = ad::scale(ad::sum_sq(z), -0.5);
    ad::Var logdet = ad::neg(ad::sum(log_sigma));
    return ad::add_const(ad::add(quad, logdet), -0.5 * n_total * kLog2Pi);
}

} // namespace dvae::codec
