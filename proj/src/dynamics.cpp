#include "dvae/dynamics.hpp"

#include <cmath>
#include <optional>

#include "dvae/rng.hpp"

namespace dvae::dyn {

int ModelParams::n_free() const {
    int n = 0;
    for (auto m : free_mask) n += m ? 1 : 0;
    return n;
}

std::vector<int> ModelParams::free_indices() const {
    std::vector<int> idx;
    for (size_t i = 0; i < free_mask.size(); ++i)
        if (free_mask[i]) idx.push_back(static_cast<int>(i));
    return idx;
}

void ModelParams::validate() const {
    if (values.cols() != 1 || prior_mean.cols() != 1 || prior_var.cols() != 1)
        throw dim_error("ModelParams entries must be column vectors");
    if (prior_mean.rows() != values.rows() || prior_var.rows() != values.rows() ||
        static_cast<int>(free_mask.size()) != values.rows())
        throw dim_error("ModelParams length mismatch");
    for (long long i = 0; i < prior_var.size(); ++i)
        if (!(prior_var[i] > 0.0)) throw config_error("prior variance must be positive");
}

bool DynSystem::linear_in_state() const {
    if (F0.has_value()) return false;
    for (const auto& f : Fk)
        if (f.has_value()) return false;
    return true;
}

Matrix DynSystem::A_of(const Matrix& lambda) const {
    Matrix a = A0.empty() ? Matrix(dim, dim) : A0;
    for (size_t k = 0; k < Ak.size(); ++k) {
        if (Ak[k].empty()) continue;
        const double lk = lambda[k];
        if (lk == 0.0) continue;
        for (long long i = 0; i < a.size(); ++i) a[i] += lk * Ak[k][i];
    }
    return a;
}

Matrix DynSystem::F_of(const Matrix& u, const Matrix& lambda) const {
    Matrix f(dim, 1);
    if (F0) f = F0->F(u);
    for (size_t k = 0; k < Fk.size(); ++k) {
        if (!Fk[k]) continue;
        Matrix fk = Fk[k]->F(u);
        const double lk = lambda[k];
        for (long long i = 0; i < f.size(); ++i) f[i] += lk * fk[i];
    }
    return f;
}

Matrix DynSystem::JF_of(const Matrix& u, const Matrix& lambda) const {
    Matrix j(dim, dim);
    if (F0) j = F0->JF(u);
    for (size_t k = 0; k < Fk.size(); ++k) {
        if (!Fk[k]) continue;
        Matrix jk = Fk[k]->JF(u);
        const double lk = lambda[k];
        for (long long i = 0; i < j.size(); ++i) j[i] += lk * jk[i];
    }
    return j;
}

Matrix DynSystem::b_or_zero() const { return b.empty() ? Matrix(dim, 1) : b; }

void TransitionModel::validate() const {
    if (!(dt > 0.0)) throw config_error("dt must be positive");
    if (sys.dim <= 0) throw config_error("system dimension not set");
}

std::pair<double, double> scheme_weights(Scheme s) {
    switch (s) {
    case Scheme::ExplicitEM: return {0.0, 1.0};
    case Scheme::ImplicitEuler: return {1.0, 0.0};
    case Scheme::CrankNicolson: return {0.5, 0.5};
    }
    return {0.5, 0.5};
}

std::pair<Matrix, Matrix> em_mean_cov(const Matrix& u_prev, const TransitionModel& model,
                                      const ModelParams& params) {
    if (model.scheme != Scheme::ExplicitEM)
        throw config_error("em_mean_cov requires the explicit Euler-Maruyama scheme");
    const DynSystem& sys = model.sys;
    const double dt = model.dt;
    Matrix rhs = matmul(sys.A_of(params.values), u_prev);
    Matrix f = sys.F_of(u_prev, params.values);
    Matrix b = sys.b_or_zero();
    // M u_n = M u_prev - dt (A u + F(u) - b)
    Matrix mu = u_prev;
    if (sys.identity_mass) {
        for (int i = 0; i < sys.dim; ++i) mu(i, 0) -= dt * (rhs(i, 0) + f(i, 0) - b(i, 0));
        return {mu, scale(sys.G, dt)};
    }
    Matrix rtot(sys.dim, 1);
    for (int i = 0; i < sys.dim; ++i) rtot(i, 0) = dt * (rhs(i, 0) + f(i, 0) - b(i, 0));
    CholFactor mf = cholesky(sys.M);
    mu = sub(u_prev, chol_solve(mf, rtot));
    // Q = dt M^-1 G M^-T
    Matrix q = chol_solve(mf, transpose(chol_solve(mf, sys.G)));
    return {mu, symmetrize(scale(q, dt))};
}

Matrix lorenz_drift(const Matrix& u, const ModelParams& params) {
    if (u.size() != 3) throw dim_error("lorenz_drift expects a length-3 state");
    const double s = params.values[0], r = params.values[1], b = params.values[2];
    return Matrix(3, 1,
                  {s * (u[1] - u[0]), u[0] * (r - u[2]) - u[1], u[0] * u[1] - b * u[2]});
}

Matrix lorenz_drift_jac(const Matrix& u, const ModelParams& params) {
    const double s = params.values[0], r = params.values[1], b = params.values[2];
    return Matrix(3, 3, {-s, s, 0.0, r - u[2], -1.0, -u[0], u[1], u[0], -b});
}

Matrix residual(const Matrix& u_n, const Matrix& u_prev, const TransitionModel& model,
                const ModelParams& params) {
    const DynSystem& sys = model.sys;
    const auto [cn, cp] = scheme_weights(model.scheme);
    Matrix ustar(sys.dim, 1);
    for (int i = 0; i < sys.dim; ++i) ustar(i, 0) = cn * u_n(i, 0) + cp * u_prev(i, 0);
    Matrix au = matmul(sys.A_of(params.values), ustar);
    Matrix f = sys.F_of(ustar, params.values);
    Matrix b = sys.b_or_zero();
    Matrix r(sys.dim, 1);
    const double dt = model.dt;
    if (sys.identity_mass) {
        for (int i = 0; i < sys.dim; ++i)
            r(i, 0) = u_n(i, 0) - u_prev(i, 0) + dt * (au(i, 0) + f(i, 0) - b(i, 0));
        return r;
    }
    Matrix du(sys.dim, 1);
    for (int i = 0; i < sys.dim; ++i) du(i, 0) = u_n(i, 0) - u_prev(i, 0);
    Matrix mdu = matmul(sys.M, du);
    for (int i = 0; i < sys.dim; ++i) r(i, 0) = mdu(i, 0) + dt * (au(i, 0) + f(i, 0) - b(i, 0));
    return r;
}

std::pair<Matrix, Matrix> jacobians(const Matrix& u_n, const Matrix& u_prev,
                                    const TransitionModel& model, const ModelParams& params) {
    const DynSystem& sys = model.sys;
    const auto [cn, cp] = scheme_weights(model.scheme);
    Matrix ustar(sys.dim, 1);
    for (int i = 0; i < sys.dim; ++i) ustar(i, 0) = cn * u_n(i, 0) + cp * u_prev(i, 0);
    Matrix B = sys.A_of(params.values);
    if (!sys.linear_in_state()) B = add(B, sys.JF_of(ustar, params.values));
    Matrix m = sys.identity_mass ? Matrix::identity(sys.dim) : sys.M;
    Matrix jn(sys.dim, sys.dim), jp(sys.dim, sys.dim);
    const double dt = model.dt;
    for (long long i = 0; i < jn.size(); ++i) {
        jn[i] = m[i] + dt * cn * B[i];
        jp[i] = -m[i] + dt * cp * B[i];
    }
    return {jn, jp};
}

Matrix residual_param_jac(const Matrix& u_n, const Matrix& u_prev,
                          const TransitionModel& model, const Matrix& lambda) {
    const DynSystem& sys = model.sys;
    const auto [cn, cp] = scheme_weights(model.scheme);
    Matrix ustar(sys.dim, 1);
    for (int i = 0; i < sys.dim; ++i) ustar(i, 0) = cn * u_n(i, 0) + cp * u_prev(i, 0);
    const int nl = static_cast<int>(lambda.size());
    Matrix out(sys.dim, nl);
    for (int k = 0; k < nl; ++k) {
        Matrix col(sys.dim, 1);
        if (k < static_cast<int>(sys.Ak.size()) && !sys.Ak[k].empty())
            col = matmul(sys.Ak[k], ustar);
        if (k < static_cast<int>(sys.Fk.size()) && sys.Fk[k])
            col = add(col, sys.Fk[k]->F(ustar));
        for (int i = 0; i < sys.dim; ++i) out(i, k) = model.dt * col(i, 0);
    }
    return out;
}

namespace {

// damped Newton from a given initial iterate; empty result on stall
std::optional<NewtonResult> newton_attempt(const TransitionModel& model,
                                           const ModelParams& params, const Matrix& u_prev,
                                           const Matrix& rhs, const Matrix& u_init) {
    const DynSystem& sys = model.sys;
    const auto [cn, cp] = scheme_weights(model.scheme);
    constexpr int kMaxIter = 50;
    constexpr double kTol = 1e-10;

    NewtonResult res;
    res.u_n = u_init;
    auto eval_residual = [&](const Matrix& u) {
        Matrix r = residual(u, u_prev, model, params);
        if (!rhs.empty()) r = sub(r, rhs);
        return r;
    };
    Matrix r = eval_residual(res.u_n);
    for (int it = 0; it < kMaxIter; ++it) {
        if (!r.all_finite()) return std::nullopt;
        Matrix ustar(sys.dim, 1);
        for (int i = 0; i < sys.dim; ++i)
            ustar(i, 0) = cn * res.u_n(i, 0) + cp * u_prev(i, 0);
        Matrix B = sys.A_of(params.values);
        if (!sys.linear_in_state()) B = add(B, sys.JF_of(ustar, params.values));
        Matrix m = sys.identity_mass ? Matrix::identity(sys.dim) : sys.M;
        Matrix jn(sys.dim, sys.dim);
        for (long long i = 0; i < jn.size(); ++i) jn[i] = m[i] + model.dt * cn * B[i];
        res.J_n_factor = lu_factorize(jn);
        res.iterations = it + 1;
        const double rnorm = max_abs(r);
        if (rnorm < kTol) {
            res.u_star = ustar;
            return res;
        }
        Matrix delta = lu_solve(res.J_n_factor, r);
        // backtracking on the residual norm
        double t = 1.0;
        Matrix u_try(sys.dim, 1), r_try;
        for (;;) {
            for (int i = 0; i < sys.dim; ++i) u_try(i, 0) = res.u_n(i, 0) - t * delta(i, 0);
            r_try = eval_residual(u_try);
            if (r_try.all_finite() && max_abs(r_try) < rnorm) break;
            t *= 0.5;
            if (t < 1e-6) return std::nullopt;
        }
        res.u_n = u_try;
        r = std::move(r_try);
    }
    return std::nullopt;
}

} // namespace

NewtonResult newton_step(const TransitionModel& model, const ModelParams& params,
                         const Matrix& u_prev, const Matrix& rhs, int step_index) {
    if (auto direct = newton_attempt(model, params, u_prev, rhs, u_prev)) return *direct;

    // Continuation fallback: compose k sub-steps of dt/k to build an initial
    // guess, then re-solve the original full-step system from it. The final
    // system is unchanged, so converged results keep their exact semantics.
    for (int k : {4, 16, 64}) {
        TransitionModel sub = model;
        sub.dt = model.dt / k;
        Matrix rhs_k;
        if (!rhs.empty()) rhs_k = scale(rhs, 1.0 / k);
        Matrix guess = u_prev;
        bool ok = true;
        for (int j = 0; j < k && ok; ++j) {
            auto step = newton_attempt(sub, params, guess, rhs_k, guess);
            if (!step) {
                ok = false;
                break;
            }
            guess = step->u_n;
        }
        if (!ok) continue;
        if (auto solved = newton_attempt(model, params, u_prev, rhs, guess)) return *solved;
    }
    throw divergence_error("Newton failed to converge (direct and continuation)", step_index);
}

Matrix simulate(const TransitionModel& model, const ModelParams& params, const Matrix& u0,
                int n_steps, std::uint64_t seed, double noise_amp) {
    model.validate();
    if (n_steps < 1) throw config_error("simulate: n_steps must be >= 1");
    const DynSystem& sys = model.sys;
    if (u0.rows() != sys.dim || u0.cols() != 1) throw dim_error("simulate: bad u0 shape");
    Rng rng(seed);

    // noise e ~ N(0, dt G); factor G once (unless disabled)
    bool with_noise = noise_amp != 0.0 && max_abs(sys.G) > 0.0;
    CholFactor gf;
    if (with_noise) gf = cholesky(sys.G);
    const double sdt = std::sqrt(model.dt) * noise_amp;

    Matrix states(n_steps + 1, sys.dim);
    for (int i = 0; i < sys.dim; ++i) states(0, i) = u0(i, 0);
    Matrix u = u0;
    for (int n = 1; n <= n_steps; ++n) {
        Matrix e;
        if (with_noise) {
            Matrix z = rng.normal_matrix(sys.dim, 1);
            e = Matrix(sys.dim, 1);
            // e = sqrt(dt) * L z with G = L L^T
            for (int i = 0; i < sys.dim; ++i) {
                double acc = 0.0;
                for (int j = 0; j <= i; ++j) acc += gf.L(i, j) * z(j, 0);
                e(i, 0) = sdt * acc;
            }
        }
        if (model.scheme == Scheme::ExplicitEM) {
            auto [mu, q] = em_mean_cov(u, model, params);
            (void)q;
            u = mu;
            if (with_noise) {
                Matrix inc = sys.identity_mass ? e : solve_lu(sys.M, e);
                u = add(u, inc);
            }
        } else {
            u = newton_step(model, params, u, e, n).u_n;
        }
        if (!u.all_finite()) throw divergence_error("simulation diverged", n);
        for (int i = 0; i < sys.dim; ++i) states(n, i) = u(i, 0);
    }
    return states;
}

// -- factories ----------------------------------------------------------------

DynSystem make_lorenz_system(double noise_sd) {
    DynSystem sys;
    sys.dim = 3;
    sys.identity_mass = true;
    sys.M = Matrix::identity(3);
    sys.G = scale(Matrix::identity(3), noise_sd * noise_sd);
    // residual convention puts the drift on the left: A u + F(u) = -drift
    sys.A0 = Matrix(3, 3, {0, 0, 0, 0, 1, 0, 0, 0, 0});
    sys.Ak.resize(3);
    sys.Ak[0] = Matrix(3, 3, {1, -1, 0, 0, 0, 0, 0, 0, 0});   // sigma
    sys.Ak[1] = Matrix(3, 3, {0, 0, 0, -1, 0, 0, 0, 0, 0});   // r
    sys.Ak[2] = Matrix(3, 3, {0, 0, 0, 0, 0, 0, 0, 0, 1});    // b
    sys.Fk.resize(3);
    NonlinBasis quad;
    quad.F = [](const Matrix& u) {
        return Matrix(3, 1, {0.0, u[0] * u[2], -u[0] * u[1]});
    };
    quad.JF = [](const Matrix& u) {
        return Matrix(3, 3, {0, 0, 0, u[2], 0, u[0], -u[1], -u[0], 0});
    };
    quad.JF_contract = [](const Matrix& u, const Matrix& adj) {
        (void)u;
        return Matrix(3, 1,
                      {adj(1, 2) - adj(2, 1), -adj(2, 0), adj(1, 0)});
    };
    sys.F0 = quad;
    return sys;
}

DynSystem make_advection_system(const Mesh1D& mesh, double rho, double ell) {
    DynSystem sys;
    sys.dim = mesh.n_u;
    sys.M = fem::assemble_mass(mesh);
    sys.G = fem::assemble_forcing_cov(mesh, rho, ell);
    sys.Ak.resize(1);
    sys.Ak[0] = fem::assemble_advection(mesh, 1.0);  // lambda_0 = c
    sys.Fk.resize(1);
    return sys;
}

DynSystem make_kdv_system(const Mesh1D& mesh, double rho, double ell) {
    DynSystem sys;
    sys.dim = mesh.n_u;
    sys.M = fem::assemble_mass(mesh);
    sys.G = fem::assemble_forcing_cov(mesh, rho, ell);
    sys.Ak.resize(2);
    sys.Ak[1] = fem::assemble_kdv(mesh, 1.0, 1.0).A_disp;  // lambda_1 = beta
    sys.Fk.resize(2);
    Mesh1D mcopy = mesh;
    NonlinBasis conv;  // lambda_0 = alpha scales the convection form
    conv.F = [mcopy](const Matrix& u) { return fem::kdv_convection(mcopy, u); };
    conv.JF = [mcopy](const Matrix& u) { return fem::kdv_convection_jac(mcopy, u); };
    conv.JF_contract = [mcopy](const Matrix& u, const Matrix& adj) {
        (void)u;
        return fem::kdv_convection_jac_contract(mcopy, adj);
    };
    sys.Fk[0] = conv;
    return sys;
}

} // namespace dvae::dyn
