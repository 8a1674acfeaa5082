#ifndef DVAE_ADAM_HPP
#define DVAE_ADAM_HPP

#include "dvae/paramset.hpp"

namespace dvae::opt {

/// Standard Adam (beta1 = 0.9, beta2 = 0.999, eps = 1e-8, bias-corrected).
struct AdamState {
    ParamSet m, v;
    long long t = 0;
};

AdamState adam_init(const ParamSet& params);

/// One Adam update, in place. Deterministic: same inputs, same result.
void adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr);

/// Scales grads so the global L2 norm is at most max_norm; returns the
/// pre-clip norm.
double clip_global_norm(ParamSet& grads, double max_norm);

} // namespace dvae::opt

#endif
