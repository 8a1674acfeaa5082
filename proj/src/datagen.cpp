#include "dvae/datagen.hpp"

#include <cmath>

namespace dvae::data {

Matrix lorenz_velocity_field(double u1, int grid_n) {
    if (!std::isfinite(u1)) throw numeric_error("lorenz_velocity_field: non-finite u1");
    const double lo = -4.0, hi = 4.0, ld = 8.0;
    const double k = M_PI / ld;
    const int n2 = grid_n * grid_n;
    Matrix out(2 * n2, 1);
    for (int i = 0; i < grid_n; ++i) {
        const double s1 = lo + (hi - lo) * i / (grid_n - 1);
        for (int j = 0; j < grid_n; ++j) {
            const double s2 = lo + (hi - lo) * j / (grid_n - 1);
            const int p = i * grid_n + j;
            // psi = u1 sin(k s1) sin(k s2); v = (-d psi / d s2, d psi / d s1)
            out(p, 0) = -u1 * std::sin(k * s1) * k * std::cos(k * s2);
            out(n2 + p, 0) = u1 * k * std::cos(k * s1) * std::sin(k * s2);
        }
    }
    return out;
}

Matrix render_frame(const Matrix& u_nodes, const Mesh1D& mesh, const FrameGrid& grid,
                    bool* clipped) {
    if (u_nodes.rows() != mesh.n_u || u_nodes.cols() != 1)
        throw dim_error("render_frame: u_nodes must be n_u x 1");
    if (!(grid.u_max > grid.u_min)) throw config_error("render_frame: empty vertical range");
    const double row_h = (grid.u_max - grid.u_min) / grid.height;
    const double L = mesh.length();
    Matrix img(grid.height, grid.width);
    bool clip = false;
    for (int c = 0; c < grid.width; ++c) {
        double s = mesh.s_min + (c + 0.5) * L / grid.width;
        // two-node hat interpolation at the column coordinate
        double rel = (s - mesh.s_min) / mesh.h();
        int e = static_cast<int>(std::floor(rel));
        double t = rel - e;
        e %= mesh.n_u;
        const double u =
            (1.0 - t) * u_nodes(e, 0) + t * u_nodes((e + 1) % mesh.n_u, 0);
        if (u < grid.u_min || u > grid.u_max) clip = true;
        for (int r = 0; r < grid.height; ++r) {
            const double height = grid.u_max - (r + 0.5) * row_h;
            img(r, c) = height < u ? 1.0 : 0.0;
        }
    }
    if (clipped != nullptr) *clipped = clip;
    return img;
}

Matrix salt_pepper(const Matrix& img, double p, Rng& rng) {
    if (p < 0.0 || p > 1.0) throw config_error("salt_pepper: p must be in [0, 1]");
    Matrix out = img;
    for (long long i = 0; i < out.size(); ++i)
        if (rng.uniform() < p) out[i] = 1.0 - out[i];
    return out;
}

Episode generate_dataset(const cfg::RunConfig& config) {
    exper::Experiment ex = exper::build_experiment(config);
    const std::string kind = config.str("experiment");
    const int N = ex.n_frames;
    const int stride = ex.stride;
    const std::uint64_t seed = static_cast<std::uint64_t>(config.num("seed"));
    Rng rng(seed);

    // deterministic latent truth (zero forcing), recorded at observation times
    Matrix traj = dyn::simulate(*ex.model, ex.lambda, ex.initial_state(), N * stride,
                                /*seed=*/rng.next_seed(), /*noise_amp=*/0.0);
    const int n_u = ex.model->sys.dim;
    Episode ep;
    ep.truth_u = Matrix(N, n_u);
    for (int n = 0; n < N; ++n)
        for (int j = 0; j < n_u; ++j) ep.truth_u(n, j) = traj((n + 1) * stride, j);

    ep.truth_x = Matrix(N, ex.n_x);
    for (int n = 0; n < N; ++n) {
        Matrix un(n_u, 1);
        for (int j = 0; j < n_u; ++j) un(j, 0) = ep.truth_u(n, j);
        Matrix xn = matmul(ex.H, un);
        for (int j = 0; j < ex.n_x; ++j) ep.truth_x(n, j) = xn(j, 0);
    }

    bool any_clipped = false;
    if (kind == "lorenz") {
        const int gn = config.integer("frame.width");
        ep.y_seq = Matrix(N, ex.n_y);
        for (int n = 0; n < N; ++n) {
            Matrix field = lorenz_velocity_field(ep.truth_u(n, 0), gn);
            for (int j = 0; j < ex.n_y; ++j) ep.y_seq(n, j) = field(j, 0);
        }
    } else {
        FrameGrid grid{config.integer("frame.width"), config.integer("frame.height"),
                       config.num("frame.u_min"), config.num("frame.u_max")};
        const double p = config.num("data.noise_p");
        ep.y_seq = Matrix(N, ex.n_y);
        for (int n = 0; n < N; ++n) {
            Matrix un(n_u, 1);
            for (int j = 0; j < n_u; ++j) un(j, 0) = ep.truth_u(n, j);
            bool clip = false;
            Matrix img = render_frame(un, ex.mesh, grid, &clip);
            any_clipped = any_clipped || clip;
            img = salt_pepper(img, p, rng);
            for (long long j = 0; j < img.size(); ++j) ep.y_seq(n, j) = img[j];
        }
    }

    ep.gen_config = config.entries();
    ep.meta["derived.n_y"] = std::to_string(ex.n_y);
    ep.meta["derived.n_u"] = std::to_string(n_u);
    ep.meta["derived.layout"] =
        kind == "lorenz" ? "v_s1 then v_s2, row-major s1 x s2 grid"
                         : "row-major frames, row 0 at the top of the range";
    if (any_clipped) ep.meta["warn.clipped"] = "1";
    return ep;
}

Episode generate_dataset(const std::string& experiment, const cfg::KvMap& overrides,
                         std::uint64_t seed) {
    cfg::RunConfig config = cfg::RunConfig::defaults(experiment);
    for (const auto& [k, v] : overrides) config.set(k, v);
    config.set("seed", std::to_string(seed));
    return generate_dataset(config);
}

Matrix reference_frames(const cfg::RunConfig& config, const Episode& episode) {
    const std::string kind = config.str("experiment");
    if (kind == "lorenz" || episode.truth_u.empty()) return episode.y_seq;
    Mesh1D mesh{config.integer("mesh.n_u"), config.num("mesh.s_min"),
                config.num("mesh.s_max"), true};
    FrameGrid grid{config.integer("frame.width"), config.integer("frame.height"),
                   config.num("frame.u_min"), config.num("frame.u_max")};
    const int N = episode.truth_u.rows();
    Matrix ref(N, grid.width * grid.height);
    for (int n = 0; n < N; ++n) {
        Matrix un(mesh.n_u, 1);
        for (int j = 0; j < mesh.n_u; ++j) un(j, 0) = episode.truth_u(n, j);
        Matrix img = render_frame(un, mesh, grid);
        for (long long j = 0; j < img.size(); ++j) ref(n, j) = img[j];
    }
    return ref;
}

} // namespace dvae::data
