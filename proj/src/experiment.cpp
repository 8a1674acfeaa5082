#include "dvae/experiment.hpp"

#include <cmath>

namespace dvae::exper {

elbo::ObjectiveSpec Experiment::objective(Matrix Y) const {
    elbo::ObjectiveSpec spec;
    spec.model = model.get();
    spec.H = H;
    spec.R = R;
    spec.prior_u0 = prior_u0;
    spec.stride = stride;
    spec.lambda = lambda;
    spec.decoder = decoder;
    spec.enc = enc;
    spec.dec = dec;
    spec.eta = eta;
    spec.n_x = n_x;
    spec.Y = std::move(Y);
    return spec;
}

Experiment build_experiment(const cfg::RunConfig& config) {
    Experiment ex;
    const std::string kind = config.str("experiment");
    ex.stride = config.integer("dyn.obs_stride");
    ex.n_frames = config.integer("data.n_frames");
    ex.n_x = config.integer("obs.n_x");
    if (ex.stride < 1 || ex.n_frames < 1)
        throw config_error("obs_stride and n_frames must be positive");

    // physical parameters with their Gaussian prior
    const auto true_vals = config.num_list("lambda.true");
    const auto prior_mean = config.num_list("lambda.prior_mean");
    const auto prior_sd = config.num_list("lambda.prior_sd");
    const auto free_mask = config.num_list("lambda.free");
    const int nl = static_cast<int>(true_vals.size());
    if (static_cast<int>(prior_mean.size()) != nl || static_cast<int>(prior_sd.size()) != nl ||
        static_cast<int>(free_mask.size()) != nl)
        throw config_error("lambda.* lists must have equal length");
    ex.lambda.values = Matrix::col(std::vector<double>(true_vals));
    ex.lambda.prior_mean = Matrix::col(std::vector<double>(prior_mean));
    Matrix pv(nl, 1);
    for (int i = 0; i < nl; ++i) pv(i, 0) = prior_sd[i] * prior_sd[i];
    ex.lambda.prior_var = pv;
    for (double f : free_mask)
        ex.lambda.free_mask.push_back(f != 0.0 ? 1 : 0);
    ex.lambda.validate();

    const double r_sd = config.num("noise.r_sd");
    const double u0_sd = config.num("prior.u0_sd");

    auto model = std::make_shared<dyn::TransitionModel>();
    model->dt = config.num("dyn.dt");
    const std::string scheme = config.str("dyn.scheme");
    if (scheme == "em")
        model->scheme = dyn::Scheme::ExplicitEM;
    else if (scheme == "cn")
        model->scheme = dyn::Scheme::CrankNicolson;
    else if (scheme == "ie")
        model->scheme = dyn::Scheme::ImplicitEuler;
    else
        throw config_error("dyn.scheme must be em, cn, or ie");

    if (kind == "lorenz") {
        if (nl != 3) throw config_error("lorenz expects lambda = (sigma, r, b)");
        model->sys = dyn::make_lorenz_system(config.num("noise.process_sd"));
        auto u0 = config.num_list("ic.u0");
        if (u0.size() != 3) throw config_error("lorenz ic.u0 must have 3 entries");
        ex.prior_u0.m = Matrix::col(std::vector<double>(u0));
        ex.H = Matrix(1, 3, {1.0, 0.0, 0.0});
        if (ex.n_x != 1) throw config_error("lorenz uses obs.n_x = 1");
        ex.n_y = 2 * config.integer("frame.width") * config.integer("frame.height");
    } else {
        ex.mesh = Mesh1D{config.integer("mesh.n_u"), config.num("mesh.s_min"),
                         config.num("mesh.s_max"), true};
        const double rho = config.num("noise.rho");
        const double ell = config.num("noise.ell");
        if (kind == "advection") {
            if (nl != 1) throw config_error("advection expects lambda = (c)");
            model->sys = dyn::make_advection_system(ex.mesh, rho, ell);
        } else if (kind == "kdv") {
            if (nl != 2) throw config_error("kdv expects lambda = (alpha, beta)");
            model->sys = dyn::make_kdv_system(ex.mesh, rho, ell);
        } else {
            throw config_error("unknown experiment '" + kind + "'");
        }
        ex.H = fem::interp_operator(ex.mesh, fem::uniform_obs_points(ex.mesh, ex.n_x));
        // nodal interpolant of the initial condition
        Matrix u0(ex.mesh.n_u, 1);
        if (kind == "advection") {
            const double c0 = config.num("ic.center");
            const double w0 = config.num("ic.width");
            for (int j = 0; j < ex.mesh.n_u; ++j) {
                const double s = ex.mesh.node(j);
                u0(j, 0) = std::exp(-(s - c0) * (s - c0) / w0);
            }
        } else {
            for (int j = 0; j < ex.mesh.n_u; ++j)
                u0(j, 0) = std::cos(M_PI * ex.mesh.node(j));
        }
        ex.prior_u0.m = u0;
        ex.n_y = config.integer("frame.width") * config.integer("frame.height");
    }
    const int n_u = model->sys.dim;
    ex.prior_u0.C = scale(Matrix::identity(n_u), u0_sd * u0_sd);
    ex.R = scale(Matrix::identity(ex.n_x), r_sd * r_sd);
    ex.model = std::move(model);

    // codec
    const std::string ctype = config.str("codec.type");
    const int hidden = config.integer("codec.hidden");
    ex.eta = config.num("codec.eta");
    if (ctype == "linear") {
        ex.decoder = elbo::DecoderKind::Linear;
    } else if (ctype == "mlp_bernoulli" || ctype == "mlp_gaussian") {
        ex.decoder = ctype == "mlp_bernoulli" ? elbo::DecoderKind::Bernoulli
                                              : elbo::DecoderKind::Gaussian;
        ex.enc = codec::MlpSpec{ex.n_y, hidden, ex.n_x, 0.01, true, "enc"};
        ex.dec = codec::MlpSpec{ex.n_x, hidden, ex.n_y, 0.01, false, "dec"};
    } else {
        throw config_error("codec.type must be linear, mlp_bernoulli, or mlp_gaussian");
    }
    return ex;
}

} // namespace dvae::exper
