#ifndef DVAE_TRAIN_HPP
#define DVAE_TRAIN_HPP

#include <functional>
#include <string>

#include "dvae/adam.hpp"
#include "dvae/elbo.hpp"

namespace dvae::train {

struct TrainConfig {
    double learning_rate = 1e-3;
    int epochs = 1;
    int m_lambda = 4;   // parameter MC samples in the loss
    int m_x = 1;        // encoder samples (the loss uses a single shared one)
    std::uint64_t seed = 0;
    double clip_norm = 100.0;
    int checkpoint_every = 50;

    void validate() const {
        if (!(learning_rate > 0.0)) throw config_error("learning_rate must be > 0");
        if (epochs < 1) throw config_error("epochs must be >= 1");
        if (m_lambda < 1) throw config_error("m_lambda must be >= 1");
    }
};

struct EpochRow {
    int epoch = 0;  // number of updates applied when this row was evaluated
    elbo::ElboTerms terms;
    double nmse = 0.0;
    Matrix mu_lambda, sigma_lambda;  // empty without free parameters
    double grad_norm = 0.0;
};

/// Full-sequence training loop: one reparameterized ELBO evaluation and one
/// Adam update per epoch. Emits epochs+1 rows (row 0 evaluates the
/// initialization). The whole run is a deterministic function of
/// (spec, y_ref, config); checkpoints carry enough state to resume exactly.
class Trainer {
public:
    Trainer(const elbo::ObjectiveSpec& spec, Matrix y_ref, TrainConfig cfg);

    /// Restores mid-run state (after `epochs_done` updates).
    void restore(const ParamSet& params, const opt::AdamState& adam,
                 const std::string& rng_state, int epochs_done);

    /// on_row: called for each metrics row (epoch = updates applied so far).
    /// after_update: called after each Adam update (checkpoint hook).
    void run(const std::function<void(const EpochRow&)>& on_row,
             const std::function<void(int)>& after_update = {});

    const ParamSet& params() const { return params_; }
    const opt::AdamState& adam() const { return adam_; }
    const Rng& rng() const { return rng_; }
    int epochs_done() const { return epochs_done_; }
    const TrainConfig& config() const { return cfg_; }

private:
    elbo::ObjectiveSpec spec_;
    Matrix y_ref_;
    TrainConfig cfg_;
    ParamSet params_;
    opt::AdamState adam_;
    Rng rng_;
    int epochs_done_ = 0;
};

} // namespace dvae::train

#endif
