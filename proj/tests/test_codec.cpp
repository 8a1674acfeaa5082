#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dvae/codec.hpp"
#include "dvae/rng.hpp"
#include "test_util.hpp"

using namespace dvae;
using test::rel_err_all;

namespace {
codec::MlpSpec enc_spec(int in, int out, int hidden = 8) {
    codec::MlpSpec s;
    s.in = in;
    s.out = out;
    s.hidden = hidden;
    s.log_scale_head = true;
    s.prefix = "enc";
    return s;
}

codec::MlpSpec dec_spec(int in, int out, int hidden = 8) {
    codec::MlpSpec s;
    s.in = in;
    s.out = out;
    s.hidden = hidden;
    s.prefix = "dec";
    return s;
}
} // namespace

TEST_CASE("encode: zero network gives mu = 0, sigma = exp(0) = 1") {
    codec::MlpSpec spec = enc_spec(4, 2);
    ParamSet p;
    Rng rng(1);
    codec::add_mlp_params(p, spec, rng);
    for (size_t s = 0; s < p.count(); ++s)
        p.value(s) = Matrix(p.value(s).rows(), p.value(s).cols());  // zero everything

    auto [mu, sigma] = codec::encode(Matrix(4, 1, {1, 2, 3, 4}), spec, p);
    CHECK(max_abs(mu) == 0.0);
    for (int i = 0; i < 2; ++i) CHECK(sigma(i, 0) == doctest::Approx(1.0));
}

TEST_CASE("LeakyReLU slope 0.01 inside the forward pass") {
    // single effective unit: W1 = I row, everything else passes through
    codec::MlpSpec spec = enc_spec(1, 1, 1);
    ParamSet p;
    p.add("enc.W1", Matrix(1, 1, {1.0}));
    p.add("enc.b1", Matrix(1, 1, {0.0}));
    p.add("enc.W2", Matrix(1, 1, {1.0}));
    p.add("enc.b2", Matrix(1, 1, {0.0}));
    p.add("enc.Wmu", Matrix(1, 1, {1.0}));
    p.add("enc.bmu", Matrix(1, 1, {0.0}));
    p.add("enc.Wsig", Matrix(1, 1, {0.0}));
    p.add("enc.bsig", Matrix(1, 1, {0.0}));

    auto [mu_neg, s1] = codec::encode(Matrix(1, 1, {-1.0}), spec, p);
    CHECK(mu_neg(0, 0) == doctest::Approx(-0.01 * 0.01).epsilon(1e-12));  // two layers
    auto [mu_pos, s2] = codec::encode(Matrix(1, 1, {2.0}), spec, p);
    CHECK(mu_pos(0, 0) == doctest::Approx(2.0));
    (void)s1;
    (void)s2;
}

TEST_CASE("encoder gradient of |mu(y)|^2 matches finite differences") {
    codec::MlpSpec spec = enc_spec(3, 2, 6);
    ParamSet p;
    Rng rng(7);
    codec::add_mlp_params(p, spec, rng);
    Matrix y = rng.normal_matrix(1, 3);

    auto f_tape = [&](ad::Tape& t, const BoundParams& b) {
        return ad::sum_sq(codec::mlp_forward(t, spec, b, t.constant(y)).mu);
    };
    ParamSet g_ad = gradient(f_tape, p);
    auto f_val = [&](const ParamSet& q) {
        ad::Tape t;
        BoundParams b = bind_inputs(t, q);
        return t.value(ad::sum_sq(codec::mlp_forward(t, spec, b, t.constant(y)).mu)).scalar();
    };
    ParamSet g_fd = test::fd_gradient(f_val, p);
    for (size_t s = 0; s < p.count(); ++s)
        CHECK(rel_err_all(g_ad.value(s), g_fd.value(s), 1e-6) < 1e-5);
}

TEST_CASE("reparam_sample: zero noise, zero scale, Monte-Carlo mean") {
    Rng rng(3);
    Matrix mu = rng.normal_matrix(4, 1);
    Matrix sigma = rng.uniform_matrix(4, 1, 0.5, 1.5);

    CHECK(rel_err_all(codec::reparam_sample(mu, sigma, Matrix(4, 1)), mu) == 0.0);
    CHECK(rel_err_all(codec::reparam_sample(mu, Matrix(4, 1), rng.normal_matrix(4, 1)), mu) ==
          0.0);

    const int n = 100000;
    Matrix acc(4, 1);
    for (int i = 0; i < n; ++i)
        acc = add(acc, codec::reparam_sample(mu, sigma, rng.normal_matrix(4, 1)));
    acc = scale(acc, 1.0 / n);
    for (int i = 0; i < 4; ++i) {
        const double se = sigma(i, 0) / std::sqrt(static_cast<double>(n));
        CHECK(std::fabs(acc(i, 0) - mu(i, 0)) < 4.0 * se);
    }
}

TEST_CASE("bernoulli decoder: half probabilities, finite loglik, gradient") {
    codec::MlpSpec spec = dec_spec(2, 5);
    ParamSet p;
    Rng rng(11);
    codec::add_mlp_params(p, spec, rng);
    ParamSet zero = p.zeros_like();
    Matrix probs0 = codec::decode_bernoulli(Matrix(2, 1, {0.3, -0.7}), spec, zero);
    for (int i = 0; i < 5; ++i) CHECK(probs0(i, 0) == doctest::Approx(0.5));

    // saturated targets stay finite thanks to the clamp
    Matrix x = rng.normal_matrix(1, 2);
    Matrix y(1, 5);
    for (int j = 0; j < 5; ++j) y(0, j) = j % 2;
    {
        ad::Tape t;
        BoundParams b = bind_inputs(t, p);
        ad::Var probs = ad::sigmoid(codec::mlp_forward(t, spec, b, t.constant(x)).mu);
        ad::Var ll = codec::bernoulli_loglik(t, ad::scale(probs, 1e-9), t.constant(y));
        CHECK(std::isfinite(t.value(ll).scalar()));
    }

    auto f_tape = [&](ad::Tape& t, const BoundParams& b) {
        ad::Var probs = ad::sigmoid(codec::mlp_forward(t, spec, b, t.constant(x)).mu);
        return codec::bernoulli_loglik(t, probs, t.constant(y));
    };
    ParamSet g_ad = gradient(f_tape, p);
    auto f_val = [&](const ParamSet& q) {
        ad::Tape t;
        BoundParams b = bind_inputs(t, q);
        return t.value(f_tape(t, b)).scalar();
    };
    ParamSet g_fd = test::fd_gradient(f_val, p);
    for (size_t s = 0; s < p.count(); ++s)
        CHECK(rel_err_all(g_ad.value(s), g_fd.value(s), 1e-6) < 1e-5);
}

TEST_CASE("gaussian decoder log-likelihood values and monotonicity") {
    const double eta = 0.005;
    const int n_y = 200;
    // log-likelihood at y = mean
    ad::Tape t;
    Matrix mean(1, n_y);
    ad::Var ll0 = codec::gaussian_loglik(t, t.constant(mean), t.constant(mean), eta);
    const double expect = -0.5 * n_y * std::log(2.0 * M_PI * eta * eta);
    CHECK(t.value(ll0).scalar() == doctest::Approx(expect).epsilon(1e-12));

    double prev = t.value(ll0).scalar();
    for (double d : {0.001, 0.01, 0.1}) {
        Matrix y = Matrix::filled(1, n_y, d);
        ad::Var ll = codec::gaussian_loglik(t, t.constant(mean), t.constant(y), eta);
        CHECK(t.value(ll).scalar() < prev);
        prev = t.value(ll).scalar();
    }
}

TEST_CASE("pinv encoder: unit column, orthonormal columns, projection identity") {
    Rng rng(13);
    const double eta = 0.05;

    codec::LinearDecoder unit;
    unit.eta = eta;
    unit.w = Matrix(4, 1, {1, 0, 0, 0});
    Matrix y = rng.normal_matrix(4, 1);
    auto [mu, cov] = codec::pinv_encode(y, unit);
    CHECK(mu(0, 0) == doctest::Approx(y(0, 0)));
    CHECK(cov(0, 0) == doctest::Approx(eta * eta));

    // orthonormal columns: mu = w^T y, cov = eta^2 I
    codec::LinearDecoder ortho;
    ortho.eta = eta;
    ortho.w = Matrix(3, 2, {1, 0, 0, 1, 0, 0});
    Matrix y3 = rng.normal_matrix(3, 1);
    auto [mu2, cov2] = codec::pinv_encode(y3, ortho);
    CHECK(rel_err_all(mu2, matmul_tn(ortho.w, y3)) < 1e-12);
    CHECK(rel_err_all(cov2, scale(Matrix::identity(2), eta * eta)) < 1e-12);

    // decode(encode(y)) is the orthogonal projection; idempotent on range(w)
    codec::LinearDecoder lin;
    lin.eta = eta;
    lin.w = rng.normal_matrix(6, 2);
    Matrix y_in_range = matmul(lin.w, rng.normal_matrix(2, 1));
    auto [mu3, cov3] = codec::pinv_encode(y_in_range, lin);
    (void)cov3;
    CHECK(rel_err_all(matmul(lin.w, mu3), y_in_range) < 1e-10);

    Matrix y_any = rng.normal_matrix(6, 1);
    auto [mu4, cov4] = codec::pinv_encode(y_any, lin);
    (void)cov4;
    Matrix proj = matmul(lin.w, mu4);
    auto [mu5, cov5] = codec::pinv_encode(proj, lin);
    (void)cov5;
    CHECK(rel_err_all(matmul(lin.w, mu5), proj) < 1e-10);

    codec::LinearDecoder rank_def;
    rank_def.eta = eta;
    rank_def.w = Matrix(3, 2, {1, 1, 2, 2, 3, 3});
    CHECK_THROWS_AS(codec::pinv_encode(rng.normal_matrix(3, 1), rank_def), numeric_error);
}

TEST_CASE("encoder is amortized: identical inputs give identical outputs") {
    codec::MlpSpec spec = enc_spec(5, 3);
    ParamSet p;
    Rng rng(17);
    codec::add_mlp_params(p, spec, rng);
    Matrix y = rng.normal_matrix(5, 1);
    auto [mu1, s1] = codec::encode(y, spec, p);
    auto [mu2, s2] = codec::encode(y, spec, p);
    for (int i = 0; i < 3; ++i) {
        CHECK(mu1(i, 0) == mu2(i, 0));
        CHECK(s1(i, 0) == s2(i, 0));
    }
}
