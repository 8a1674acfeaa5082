#include "dvae/elbo.hpp"

#include <cmath>

namespace dvae::elbo {

namespace {
constexpr double kLog2Pi = 1.8378770664093454835606594728112;
// stand-in log-likelihood for parameter draws whose filter run diverged:
// a steep quadratic bowl (in prior-sd units) centered at the prior mean
constexpr double kDivergedSamplePenalty = -1e8;
constexpr double kDivergedSampleStiffness = 1e5;
} // namespace

double kl_gaussian_diag(const Matrix& mu_q, const Matrix& sigma_q, const Matrix& mu0,
                        const Matrix& var0) {
    if (!mu_q.same_shape(sigma_q) || !mu_q.same_shape(mu0) || !mu_q.same_shape(var0))
        throw dim_error("kl_gaussian_diag shape mismatch");
    double kl = 0.0;
    for (long long i = 0; i < mu_q.size(); ++i) {
        const double s2 = sigma_q[i] * sigma_q[i];
        const double d = mu_q[i] - mu0[i];
        kl += 0.5 * std::log(var0[i] / s2) + (s2 + d * d) / (2.0 * var0[i]) - 0.5;
    }
    return kl;
}

ad::Var kl_gaussian_diag_node(ad::Tape& tape, ad::Var mu_q, ad::Var log_sigma_q,
                              const Matrix& mu0, const Matrix& var0) {
    const long long n = tape.value(mu_q).size();
    Matrix inv_var0(var0.rows(), var0.cols());
    double const_part = 0.0;
    for (long long i = 0; i < n; ++i) {
        inv_var0[i] = 1.0 / var0[i];
        const_part += 0.5 * std::log(var0[i]) - 0.5;
    }
    ad::Var sigma2 = ad::exp(ad::scale(log_sigma_q, 2.0));
    ad::Var d = ad::sub(mu_q, tape.constant(mu0));
    ad::Var quad = ad::scale(
        ad::dot(tape.constant(inv_var0), ad::add(sigma2, ad::hadamard(d, d))), 0.5);
    ad::Var logs = ad::neg(ad::sum(log_sigma_q));
    return ad::add_const(ad::add(quad, logs), const_part);
}

double mc_kl(const VariationalLambda& q, const std::function<double(const Matrix&)>& prior_logpdf,
             int n_samples, Rng& rng) {
    if (n_samples < 1) throw config_error("mc_kl: need at least one sample");
    const long long n = q.mu.size();
    double acc = 0.0;
    for (int s = 0; s < n_samples; ++s) {
        Matrix lam(q.mu.rows(), 1);
        double logq = 0.0;
        for (long long i = 0; i < n; ++i) {
            const double sig = std::exp(q.log_sigma[i]);
            const double eps = rng.normal();
            lam[i] = q.mu[i] + sig * eps;
            logq += -0.5 * eps * eps - q.log_sigma[i] - 0.5 * kLog2Pi;
        }
        acc += logq - prior_logpdf(lam);
    }
    return acc / n_samples;
}

namespace {

struct EncodeResult {
    ad::Var x;     // N x n_x sample
    ad::Var logq;  // scalar
    ad::Var mu;    // N x n_x (mean encoding)
};

EncodeResult encode_and_sample(ad::Tape& tape, const ParamSet& params,
                               const BoundParams& bound, const ObjectiveSpec& spec,
                               ad::Var Yc, Rng& rng) {
    (void)params;
    const int N = spec.Y.rows();
    EncodeResult out;
    if (spec.decoder == DecoderKind::Linear) {
        // tied pseudo-inverse encoder: mu = (w^T w)^-1 w^T y,
        // sample x = (w^T w)^-1 w^T (y + eta z), z ~ N(0, I)
        ad::Var W = bound.at("dec.w");
        ad::Var WtW = ad::matmul_tn(W, W);
        ad::Var F = ad::chol_factorize(WtW);
        ad::Var mu = ad::transpose(ad::chol_solve(F, ad::transpose(ad::matmul(Yc, W))));
        Matrix z = rng.normal_matrix(N, spec.Y.cols());
        ad::Var pert = ad::matmul(tape.constant(scale(z, spec.eta)), W);
        ad::Var dx = ad::transpose(ad::chol_solve(F, ad::transpose(pert)));
        out.x = ad::add(mu, dx);
        // log q(x) under N(mu, eta^2 (W^T W)^-1), so the quadratic form is
        // through W^T W and the normalizer through its logdet
        ad::Var d = ad::sub(out.x, mu);
        ad::Var quad = ad::scale(ad::sum(ad::hadamard(ad::matmul(d, WtW), d)),
                                 -0.5 / (spec.eta * spec.eta));
        ad::Var ld = ad::scale(ad::chol_logdet(F), 0.5 * N);
        out.logq = ad::add_const(
            ad::add(quad, ld),
            -0.5 * N * spec.n_x * (kLog2Pi + 2.0 * std::log(spec.eta)));
        out.mu = mu;
        return out;
    }
    codec::MlpHeads heads = codec::mlp_forward(tape, spec.enc, bound, Yc);
    ad::Var sigma = ad::exp(heads.log_sigma);
    Matrix eps = rng.normal_matrix(N, spec.n_x);
    out.x = codec::reparam_sample(heads.mu, sigma, tape.constant(eps));
    out.logq = codec::gaussian_logq_diag(tape, out.x, heads.mu, heads.log_sigma);
    out.mu = heads.mu;
    return out;
}

ad::Var decode_loglik(ad::Tape& tape, const BoundParams& bound, const ObjectiveSpec& spec,
                      ad::Var x, ad::Var Yc) {
    switch (spec.decoder) {
    case DecoderKind::Bernoulli: {
        codec::MlpHeads heads = codec::mlp_forward(tape, spec.dec, bound, x);
        return codec::bernoulli_loglik(tape, ad::sigmoid(heads.mu), Yc);
    }
    case DecoderKind::Gaussian: {
        codec::MlpHeads heads = codec::mlp_forward(tape, spec.dec, bound, x);
        return codec::gaussian_loglik(tape, heads.mu, Yc, spec.eta);
    }
    case DecoderKind::Linear: {
        ad::Var mean = ad::matmul_nt(x, bound.at("dec.w"));
        return codec::gaussian_loglik(tape, mean, Yc, spec.eta);
    }
    }
    throw config_error("unknown decoder kind");
}

} // namespace

ElboEval elbo_eval(const ParamSet& params, const ObjectiveSpec& spec, Rng& rng,
                   bool want_grads) {
    if (spec.model == nullptr) throw config_error("elbo: missing transition model");
    const int n_free = spec.lambda.n_free();

    ad::Tape tape;
    BoundParams bound = bind_inputs(tape, params);
    ad::Var Yc = tape.constant(spec.Y);

    EncodeResult enc = encode_and_sample(tape, params, bound, spec, Yc, rng);
    ad::Var recon = decode_loglik(tape, bound, spec, enc.x, Yc);

    ad::Var filter_term{}, kl_term{};
    if (n_free > 0) {
        ad::Var mu_l = bound.at("lambda.mu");
        ad::Var ls_l = bound.at("lambda.log_sigma");
        ad::Var sig_l = ad::exp(ls_l);
        const auto free_idx = spec.lambda.free_indices();
        int diverged = 0;
        std::string last_failure;
        for (int j = 0; j < spec.m_lambda; ++j) {
            Matrix eps = rng.normal_matrix(n_free, 1);
            ad::Var sample = ad::add(mu_l, ad::hadamard(sig_l, tape.constant(eps)));
            filt::LambdaBinding bind_l;
            bind_l.values = spec.lambda.values;
            for (int k = 0; k < n_free; ++k) {
                bind_l.values[free_idx[k]] = tape.value(sample)[k];
                bind_l.free_idx.push_back(free_idx[k]);
                bind_l.free_vars.push_back(ad::row_of(sample, k));
            }
            ad::Var ll{};
            try {
                ll = filt::build_filter(tape, *spec.model, bind_l, enc.x, spec.H, spec.R,
                                        spec.prior_u0, spec.stride)
                         .loglik;
            } catch (const std::exception& e) {
                // An explosive parameter draw has effectively -inf likelihood;
                // floor it at a steep quadratic in prior-sd units so the
                // remaining samples carry the epoch. A constant floor would be
                // gradient-transparent and let q inflate into the divergent
                // region for free; the quadratic keeps a pathwise pull back.
                ++diverged;
                last_failure = e.what();
                Matrix inv_sd(n_free, 1);
                Matrix m0(n_free, 1);
                for (int k = 0; k < n_free; ++k) {
                    m0(k, 0) = spec.lambda.prior_mean[free_idx[k]];
                    inv_sd(k, 0) = 1.0 / std::sqrt(spec.lambda.prior_var[free_idx[k]]);
                }
                ad::Var z = ad::hadamard(ad::sub(sample, tape.constant(m0)),
                                         tape.constant(inv_sd));
                ll = ad::add_const(ad::scale(ad::sum_sq(z), -kDivergedSampleStiffness),
                                   kDivergedSamplePenalty);
            }
            filter_term = (j == 0) ? ll : ad::add(filter_term, ll);
        }
        if (diverged == spec.m_lambda)
            throw divergence_error("all " + std::to_string(spec.m_lambda) +
                                   " parameter samples diverged in the filter (" +
                                   last_failure + ")");
        if (spec.m_lambda > 1) filter_term = ad::scale(filter_term, 1.0 / spec.m_lambda);

        Matrix mu0(n_free, 1), var0(n_free, 1);
        for (int k = 0; k < n_free; ++k) {
            mu0(k, 0) = spec.lambda.prior_mean[free_idx[k]];
            var0(k, 0) = spec.lambda.prior_var[free_idx[k]];
        }
        kl_term = kl_gaussian_diag_node(tape, mu_l, ls_l, mu0, var0);
    } else {
        filt::LambdaBinding bind_l{spec.lambda.values, {}, {}};
        filt::FilterGraph fg = filt::build_filter(tape, *spec.model, bind_l, enc.x, spec.H,
                                                  spec.R, spec.prior_u0, spec.stride);
        filter_term = fg.loglik;
    }

    ad::Var objective = ad::add(ad::sub(recon, enc.logq), filter_term);
    if (kl_term.valid()) objective = ad::sub(objective, kl_term);

    ElboEval out;
    out.terms.recon = tape.value(recon).scalar();
    out.terms.logq = tape.value(enc.logq).scalar();
    out.terms.filter_ll = tape.value(filter_term).scalar();
    out.terms.kl = kl_term.valid() ? tape.value(kl_term).scalar() : 0.0;
    out.terms.elbo = tape.value(objective).scalar();

    if (want_grads) {
        tape.backward(objective);
        out.grads = params.zeros_like();
        for (size_t i = 0; i < params.count(); ++i) {
            ad::Var v = bound.at(params.name(i));
            if (tape.has_grad(v)) out.grads.value(i) = tape.grad(v);
        }
    }
    return out;
}

Matrix reconstruct_mean(const ParamSet& params, const ObjectiveSpec& spec) {
    ad::Tape tape;
    BoundParams bound;
    for (size_t i = 0; i < params.count(); ++i)
        bound.vars[params.name(i)] = tape.constant(params.value(i));
    ad::Var Yc = tape.constant(spec.Y);

    ad::Var xbar{};
    if (spec.decoder == DecoderKind::Linear) {
        ad::Var W = bound.at("dec.w");
        ad::Var F = ad::chol_factorize(ad::matmul_tn(W, W));
        xbar = ad::transpose(ad::chol_solve(F, ad::transpose(ad::matmul(Yc, W))));
    } else {
        xbar = codec::mlp_forward(tape, spec.enc, bound, Yc).mu;
    }
    switch (spec.decoder) {
    case DecoderKind::Bernoulli:
        return tape.value(ad::sigmoid(codec::mlp_forward(tape, spec.dec, bound, xbar).mu));
    case DecoderKind::Gaussian:
        return tape.value(codec::mlp_forward(tape, spec.dec, bound, xbar).mu);
    case DecoderKind::Linear:
        return tape.value(ad::matmul_nt(xbar, bound.at("dec.w")));
    }
    throw config_error("unknown decoder kind");
}

Matrix sample_encoding(const ParamSet& params, const ObjectiveSpec& spec, Rng& rng) {
    ad::Tape tape;
    BoundParams bound;
    for (size_t i = 0; i < params.count(); ++i)
        bound.vars[params.name(i)] = tape.constant(params.value(i));
    ad::Var Yc = tape.constant(spec.Y);
    EncodeResult enc = encode_and_sample(tape, params, bound, spec, Yc, rng);
    return tape.value(enc.x);
}

Matrix decode_mean(const ParamSet& params, const ObjectiveSpec& spec, const Matrix& x_seq) {
    ad::Tape tape;
    BoundParams bound;
    for (size_t i = 0; i < params.count(); ++i)
        bound.vars[params.name(i)] = tape.constant(params.value(i));
    ad::Var x = tape.constant(x_seq);
    switch (spec.decoder) {
    case DecoderKind::Bernoulli:
        return tape.value(ad::sigmoid(codec::mlp_forward(tape, spec.dec, bound, x).mu));
    case DecoderKind::Gaussian:
        return tape.value(codec::mlp_forward(tape, spec.dec, bound, x).mu);
    case DecoderKind::Linear:
        return tape.value(ad::matmul_nt(x, bound.at("dec.w")));
    }
    throw config_error("unknown decoder kind");
}

double nmse(const Matrix& yhat, const Matrix& yref) {
    if (!yhat.same_shape(yref)) throw dim_error("nmse shape mismatch");
    const double denom = sum_sq(yref);
    if (denom == 0.0) throw numeric_error("nmse: zero reference energy");
    return sum_sq(sub(yhat, yref)) / denom;
}

ParamSet init_params(const ObjectiveSpec& spec, Rng& rng) {
    ParamSet params;
    if (spec.decoder == DecoderKind::Linear) {
        const int n_y = spec.Y.cols();
        const double a = std::sqrt(6.0 / (n_y + spec.n_x));
        params.add("dec.w", rng.uniform_matrix(n_y, spec.n_x, -a, a));
    } else {
        codec::add_mlp_params(params, spec.enc, rng);
        codec::add_mlp_params(params, spec.dec, rng);
    }
    const int n_free = spec.lambda.n_free();
    if (n_free > 0) {
        const auto idx = spec.lambda.free_indices();
        Matrix mu(n_free, 1), ls(n_free, 1);
        for (int k = 0; k < n_free; ++k) {
            mu(k, 0) = spec.lambda.prior_mean[idx[k]];
            ls(k, 0) = 0.5 * std::log(spec.lambda.prior_var[idx[k]]);
        }
        params.add("lambda.mu", mu);
        params.add("lambda.log_sigma", ls);
    }
    return params;
}

} // namespace dvae::elbo
