#include "dvae/adam.hpp"

#include <cmath>

namespace dvae::opt {

namespace {
constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kEps = 1e-8;
} // namespace

AdamState adam_init(const ParamSet& params) {
    return AdamState{params.zeros_like(), params.zeros_like(), 0};
}

void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr) {
    if (params.count() != grads.count() || params.count() != state.m.count())
        throw dim_error("adam_step: slot count mismatch");
    state.t += 1;
    const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(state.t));
    const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(state.t));
    for (size_t s = 0; s < params.count(); ++s) {
        Matrix& p = params.value(s);
        const Matrix& g = grads.value(s);
        Matrix& m = state.m.value(s);
        Matrix& v = state.v.value(s);
        if (!p.same_shape(g)) throw dim_error("adam_step: shape mismatch in '" + params.name(s) + "'");
        for (long long i = 0; i < p.size(); ++i) {
            m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * g[i];
            v[i] = kBeta2 * v[i] + (1.0 - kBeta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            p[i] -= lr * mhat / (std::sqrt(vhat) + kEps);
        }
    }
}

double clip_global_norm(ParamSet& grads, double max_norm) {
    double sq = 0.0;
    for (size_t s = 0; s < grads.count(); ++s) sq += sum_sq(grads.value(s));
    const double norm = std::sqrt(sq);
    if (norm > max_norm && norm > 0.0) {
        const double f = max_norm / norm;
        for (size_t s = 0; s < grads.count(); ++s)
            for (long long i = 0; i < grads.value(s).size(); ++i) grads.value(s)[i] *= f;
    }
    return norm;
}

} // namespace dvae::opt
