#include "dvae/train.hpp"

#include <cmath>

namespace dvae::train {

Trainer::Trainer(const elbo::ObjectiveSpec& spec, Matrix y_ref, TrainConfig cfg)
    : spec_(spec), y_ref_(std::move(y_ref)), cfg_(cfg), rng_(cfg.seed) {
    cfg_.validate();
    spec_.m_lambda = cfg_.m_lambda;
    params_ = elbo::init_params(spec_, rng_);
    adam_ = opt::adam_init(params_);
}

void Trainer::restore(const ParamSet& params, const opt::AdamState& adam,
                      const std::string& rng_state, int epochs_done) {
    params_ = params;
    adam_ = adam;
    rng_.deserialize(rng_state);
    epochs_done_ = epochs_done;
}

void Trainer::run(const std::function<void(const EpochRow&)>& on_row,
                  const std::function<void(int)>& after_update) {
    const int n_free = spec_.lambda.n_free();
    for (int e = epochs_done_;; ++e) {
        elbo::ElboEval ev = elbo::elbo_eval(params_, spec_, rng_, /*want_grads=*/true);
        if (!std::isfinite(ev.terms.elbo))
            throw numeric_error("non-finite loss at epoch " + std::to_string(e) +
                                " (recon=" + std::to_string(ev.terms.recon) +
                                ", filter=" + std::to_string(ev.terms.filter_ll) + ")");
        EpochRow row;
        row.epoch = e;
        row.terms = ev.terms;
        row.nmse = elbo::nmse(elbo::reconstruct_mean(params_, spec_), y_ref_);
        if (n_free > 0) {
            row.mu_lambda = params_.at("lambda.mu");
            Matrix ls = params_.at("lambda.log_sigma");
            Matrix sig(ls.rows(), 1);
            for (long long i = 0; i < ls.size(); ++i) sig[i] = std::exp(ls[i]);
            row.sigma_lambda = sig;
        }
        row.grad_norm = 0.0;
        for (size_t s = 0; s < ev.grads.count(); ++s) row.grad_norm += sum_sq(ev.grads.value(s));
        row.grad_norm = std::sqrt(row.grad_norm);
        on_row(row);

        if (e >= cfg_.epochs) break;
        // Adam minimizes; the loss is the negative ELBO
        ParamSet loss_grads = ev.grads;
        for (size_t s = 0; s < loss_grads.count(); ++s)
            for (long long i = 0; i < loss_grads.value(s).size(); ++i)
                loss_grads.value(s)[i] = -loss_grads.value(s)[i];
        opt::clip_global_norm(loss_grads, cfg_.clip_norm);
        // short fixed ramp on the step size: until the encoder is roughly
        // aligned, full Adam steps can push pseudo-observations outside the
        // solvable regime of the stiff latent models (norm clipping cannot
        // bound Adam steps, which are invariant to gradient rescaling)
        const int warmup = std::min(20, cfg_.epochs);
        const double ramp = std::min(1.0, static_cast<double>(e + 1) / warmup);
        opt::adam_step(params_, loss_grads, adam_, cfg_.learning_rate * ramp);
        epochs_done_ = e + 1;
        if (after_update) after_update(epochs_done_);
    }
}

} // namespace dvae::train
