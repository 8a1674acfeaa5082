#ifndef DVAE_EXPERIMENT_HPP
#define DVAE_EXPERIMENT_HPP

#include <memory>

#include "dvae/config.hpp"
#include "dvae/elbo.hpp"

namespace dvae::exper {

/// Latent model, pseudo-observation process, parameter priors, and codec
/// settings assembled from a run configuration. The transition model is
/// heap-held so ObjectiveSpec can reference it stably.
struct Experiment {
    Mesh1D mesh;  // meaningful for the PDE experiments
    std::shared_ptr<dyn::TransitionModel> model;
    dyn::ModelParams lambda;  // values = true Lambda from the config
    Matrix H, R;
    filt::GaussianState prior_u0;
    int stride = 1;
    int n_x = 0, n_y = 0, n_frames = 0;

    elbo::DecoderKind decoder = elbo::DecoderKind::Bernoulli;
    codec::MlpSpec enc, dec;
    double eta = 0.1;

    Matrix initial_state() const { return prior_u0.m; }

    /// Objective over an observation sequence; lambda free entries follow
    /// the config's mask (fixed entries keep their true values).
    elbo::ObjectiveSpec objective(Matrix Y) const;
};

Experiment build_experiment(const cfg::RunConfig& config);

} // namespace dvae::exper

#endif
