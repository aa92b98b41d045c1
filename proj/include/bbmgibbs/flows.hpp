#pragma once

#include <bbmgibbs/operators.hpp>
#include <bbmgibbs/potential.hpp>
#include <bbmgibbs/reports.hpp>
#include <bbmgibbs/spectral.hpp>
#include <bbmgibbs/trig_operator.hpp>

#include <Eigen/Dense>

#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbmgibbs {

enum class FlowKind { linear, galerkin_bbm, perturbed, composite_bbm, composite_perturbed };
enum class Integrator { implicit_midpoint, rk4_oracle, picard_duhamel };

inline bool is_composite(FlowKind k) {
    return k == FlowKind::composite_bbm || k == FlowKind::composite_perturbed;
}
inline bool is_perturbed(FlowKind k) {
    return k == FlowKind::perturbed || k == FlowKind::composite_perturbed;
}

inline const char* to_string(FlowKind k) {
    switch (k) {
        case FlowKind::linear: return "linear";
        case FlowKind::galerkin_bbm: return "galerkin-bbm";
        case FlowKind::perturbed: return "perturbed";
        case FlowKind::composite_bbm: return "composite-bbm";
        case FlowKind::composite_perturbed: return "composite-perturbed";
    }
    return "?";
}

inline const char* to_string(Integrator i) {
    switch (i) {
        case Integrator::implicit_midpoint: return "implicit-midpoint";
        case Integrator::rk4_oracle: return "rk4-oracle";
        case Integrator::picard_duhamel: return "picard-duhamel";
    }
    return "?";
}

struct FlowSpec {
    FlowKind kind = FlowKind::galerkin_bbm;
    int N = 16;          // nonlinear truncation order
    int N_tail = 0;      // extra linearly-evolved modes (composite kinds)
    std::optional<Potential> V;
    Integrator integrator = Integrator::implicit_midpoint;
    double dt = 1e-3;
    double tol = 1e-12;      // nonlinear-solve tolerance per step
    double picard_s = 0.4;   // H^s space for the Duhamel horizon
    double c_hat = 2.0;      // fitted local-existence constant
    int nodes_per_unit = 64; // Duhamel quadrature density

    int total_order() const { return is_composite(kind) ? N + N_tail : N; }

    void validate() const {
        if (N < 0 || N_tail < 0) throw std::invalid_argument("FlowSpec: negative order");
        if (!(dt > 0)) throw std::invalid_argument("FlowSpec: dt must be positive");
        if (!(tol > 0)) throw std::invalid_argument("FlowSpec: tol must be positive");
        if (is_perturbed(kind) != V.has_value())
            throw std::invalid_argument(
                "FlowSpec: V must be present exactly for the perturbed kinds");
    }
};

struct StepDiagnostics {
    long steps = 0;
    long iterations = 0;
    double max_residual = 0.0;
};

struct Trajectory {
    std::vector<double> times;
    std::vector<SpectralField> states;
    std::map<std::string, std::vector<double>> conserved;
    StepDiagnostics diagnostics;

    const SpectralField& final_state() const { return states.back(); }
};

struct FlowError : std::runtime_error {
    long step = -1;
    double residual = quiet_nan;
    FlowError(const std::string& msg, long step_, double res)
        : std::runtime_error(msg), step(step_), residual(res) {}
};

/// Exact flow of the linearized equation: mode n rotates by the angle
/// omega_n t with omega_n = n/(1+n^2) (right-moving phases; see the mode ODE
/// (1+n^2) da_n/dt = -n b_n). Every H^s norm is preserved exactly.
inline SpectralField linear_flow(const SpectralField& u, double t) {
    SpectralField v(u.N);
    v.a[0] = u.a[0];
    for (int n = 1; n <= u.N; ++n) {
        const double th = t * static_cast<double>(n) / (1.0 + static_cast<double>(n) * n);
        const double c = std::cos(th), s = std::sin(th);
        v.a[n] = c * u.a[n] - s * u.b[n - 1];
        v.b[n - 1] = s * u.a[n] + c * u.b[n - 1];
    }
    return v;
}

// ---- conserved quantities ------------------------------------------------

/// (1/2) integral of u (1 - d_x^2) u.
inline double h1_energy(const SpectralField& u) {
    double t = u.a[0] * u.a[0];
    for (int n = 1; n <= u.N; ++n)
        t += (1.0 + static_cast<double>(n) * n) *
             (u.a[n] * u.a[n] + u.b[n - 1] * u.b[n - 1]);
    return 0.5 * t;
}

/// Hamiltonian of the (possibly perturbed) truncated flow:
/// H = 1/2 |V_N u|^2 + 1/6 integral (V_N u)^3, with V_N = identity when no V.
inline double hamiltonian_h(const SpectralField& u, const std::optional<Potential>& V, int N) {
    const SpectralField head = project(u, N);
    SpectralField v = head;
    if (V && !V->is_zero()) v = build_v_n(*V, N).apply(head);
    return 0.5 * inner(v, v) + integral_cube(v) / 6.0;
}

/// E_V = 1/2 u^T W_N u, the quadratic invariant of the perturbed flow.
inline double energy_ev(const SpectralField& u, const Potential& V, int N) {
    const Eigen::VectorXd y = project(u, N).packed();
    return 0.5 * y.dot(build_w_n(V, N).mat * y);
}

// ---- right-hand sides ------------------------------------------------------

/// F_N(u) = -K_N ( Pi_N u + Pi_N (Pi_N u)^2 / 2 ), the Galerkin vector field.
inline SpectralField bbm_rhs(const SpectralField& u, int N);

/// -J_N ( V_N^2 u + V_N Pi_N (V_N u)^2 / 2 ).
inline SpectralField perturbed_rhs(const SpectralField& u, const Potential& V, int N);

/// Shared dense machinery for one flow: product grids, operator matrices and
/// scratch buffers. The engine itself is immutable after construction and is
/// shared read-only across threads; all mutable state lives in Work.
class FlowEngine {
public:
    struct Work {
        Eigen::VectorXd grid, grid_sq, q, v, z, f, fmid, m, mnew, k1, k2, k3, k4, tmp;
    };

    explicit FlowEngine(FlowSpec spec) : spec_(std::move(spec)) {
        spec_.validate();
        const int N = spec_.N;
        dim_ = 2 * N + 1;
        omega_.resize(N + 1);
        for (int n = 0; n <= N; ++n)
            omega_[n] = static_cast<double>(n) / (1.0 + static_cast<double>(n) * n);
        if (spec_.kind != FlowKind::linear) {
            grid_size_ = 3 * N + 1;
            synth_ = synthesis_matrix(N, grid_size_);
            anal_ = analysis_matrix(N, grid_size_);
        }
        if (is_perturbed(spec_.kind)) {
            vn_ = build_v_n(*spec_.V, N).mat;
            vn2_ = vn_ * vn_;
            jn_ = build_j_n(*spec_.V, N).mat;
            wn_ = build_w_n(*spec_.V, N).mat;
        }
    }

    const FlowSpec& spec() const { return spec_; }
    int head_dim() const { return dim_; }
    const Eigen::MatrixXd& w_matrix() const { return wn_; }

    Work make_work() const {
        Work w;
        w.grid.resize(grid_size_ > 0 ? grid_size_ : 1);
        w.grid_sq.resize(grid_size_ > 0 ? grid_size_ : 1);
        for (auto* vec : {&w.q, &w.v, &w.z, &w.f, &w.fmid, &w.m, &w.mnew, &w.k1, &w.k2, &w.k3,
                          &w.k4, &w.tmp})
            vec->resize(dim_);
        return w;
    }

    /// Nonlinear head vector field on packed coefficients.
    void rhs(const Eigen::VectorXd& y, Eigen::VectorXd& out, Work& w) const {
        const int N = spec_.N;
        switch (spec_.kind) {
            case FlowKind::linear: {
                out[0] = 0.0;
                for (int n = 1; n <= N; ++n) {
                    out[n] = -omega_[n] * y[N + n];
                    out[N + n] = omega_[n] * y[n];
                }
                return;
            }
            case FlowKind::galerkin_bbm:
            case FlowKind::composite_bbm: {
                w.grid.noalias() = synth_ * y;
                w.grid_sq.array() = w.grid.array() * w.grid.array();
                w.q.noalias() = anal_ * w.grid_sq;
                out[0] = 0.0;
                for (int n = 1; n <= N; ++n) {
                    out[n] = -omega_[n] * (y[N + n] + 0.5 * w.q[N + n]);
                    out[N + n] = omega_[n] * (y[n] + 0.5 * w.q[n]);
                }
                return;
            }
            case FlowKind::perturbed:
            case FlowKind::composite_perturbed: {
                w.v.noalias() = vn_ * y;
                w.grid.noalias() = synth_ * w.v;
                w.grid_sq.array() = w.grid.array() * w.grid.array();
                w.q.noalias() = anal_ * w.grid_sq;
                w.z.noalias() = vn2_ * y;
                w.z.noalias() += 0.5 * (vn_ * w.q);
                out.noalias() = -(jn_ * w.z);
                return;
            }
        }
    }

    /// One implicit-midpoint step y -> y + h F((y + y')/2), fixed-point solve.
    void step_midpoint(Eigen::VectorXd& y, double h, Work& w, StepDiagnostics& diag,
                       bool& have_fmid) const {
        if (!have_fmid) {
            rhs(y, w.fmid, w);
            have_fmid = true;
        }
        w.m.noalias() = y + (0.5 * h) * w.fmid;
        double res = quiet_nan;
        for (int it = 0; it < 50; ++it) {
            rhs(w.m, w.f, w);
            w.mnew.noalias() = y + (0.5 * h) * w.f;
            res = (w.mnew - w.m).lpNorm<Eigen::Infinity>();
            w.m.swap(w.mnew);
            ++diag.iterations;
            if (!std::isfinite(res))
                throw FlowError("implicit midpoint iterates overflowed at step " +
                                    std::to_string(diag.steps),
                                diag.steps, res);
            if (res < spec_.tol) {
                diag.max_residual = std::max(diag.max_residual, res);
                w.fmid.swap(w.f);
                y = 2.0 * w.m - y;
                check_state(y, diag.steps);
                return;
            }
        }
        throw FlowError("implicit midpoint solve did not converge at step " +
                            std::to_string(diag.steps) + " (residual " + std::to_string(res) + ")",
                        diag.steps, res);
    }

    void step_rk4(Eigen::VectorXd& y, double h, Work& w, StepDiagnostics& diag) const {
        rhs(y, w.k1, w);
        w.tmp.noalias() = y + (0.5 * h) * w.k1;
        rhs(w.tmp, w.k2, w);
        w.tmp.noalias() = y + (0.5 * h) * w.k2;
        rhs(w.tmp, w.k3, w);
        w.tmp.noalias() = y + h * w.k3;
        rhs(w.tmp, w.k4, w);
        y.noalias() += (h / 6.0) * (w.k1 + 2.0 * w.k2 + 2.0 * w.k3 + w.k4);
        check_state(y, diag.steps);
    }

    /// Advances the head by `span` using uniform steps of at most spec.dt.
    void advance(Eigen::VectorXd& y, double span, Work& w, StepDiagnostics& diag,
                 bool& have_fmid) const {
        if (span == 0.0) return;
        if (spec_.kind == FlowKind::linear) {
            rotate_packed(y, span);
            return;
        }
        const double dir = span > 0 ? 1.0 : -1.0;
        double remaining = std::abs(span);
        while (remaining > 1e-15) {
            const double h = std::min(remaining, spec_.dt);
            if (spec_.integrator == Integrator::rk4_oracle) {
                step_rk4(y, dir * h, w, diag);
                have_fmid = false;
            } else {
                step_midpoint(y, dir * h, w, diag, have_fmid);
            }
            remaining -= h;
            ++diag.steps;
        }
    }

    /// Exact per-mode rotation of a packed vector (used for linear flows).
    void rotate_packed(Eigen::VectorXd& y, double t) const {
        const int N = spec_.N;
        for (int n = 1; n <= N; ++n) {
            const double th = t * omega_[n];
            const double c = std::cos(th), s = std::sin(th);
            const double an = y[n], bn = y[N + n];
            y[n] = c * an - s * bn;
            y[N + n] = s * an + c * bn;
        }
    }

    double energy_ev_packed(const Eigen::VectorXd& y) const {
        return 0.5 * y.dot(wn_ * y);
    }

private:
    void check_state(const Eigen::VectorXd& y, long step) const {
        const double norm = y.norm();
        if (!(norm < 1e6))
            throw FlowError("state norm " + std::to_string(norm) + " exceeds the blow-up guard at step " +
                                std::to_string(step),
                            step, norm);
    }

    FlowSpec spec_;
    int dim_ = 1;
    int grid_size_ = 0;
    std::vector<double> omega_;
    Eigen::MatrixXd synth_, anal_;
    Eigen::MatrixXd vn_, vn2_, jn_, wn_;
};

inline SpectralField bbm_rhs(const SpectralField& u, int N) {
    FlowSpec fs;
    fs.kind = FlowKind::galerkin_bbm;
    fs.N = N;
    FlowEngine eng(fs);
    auto w = eng.make_work();
    Eigen::VectorXd out(2 * N + 1);
    eng.rhs(project(u, N).packed(), out, w);
    return SpectralField::from_packed(N, out);
}

inline SpectralField perturbed_rhs(const SpectralField& u, const Potential& V, int N) {
    FlowSpec fs;
    fs.kind = FlowKind::perturbed;
    fs.N = N;
    fs.V = V;
    FlowEngine eng(fs);
    auto w = eng.make_work();
    Eigen::VectorXd out(2 * N + 1);
    eng.rhs(project(u, N).packed(), out, w);
    return SpectralField::from_packed(N, out);
}

namespace detail {

/// Splits u0 into the nonlinear head and the linearly-rotated tail.
struct CompositeState {
    Eigen::VectorXd head;        // packed, order N
    SpectralField tail0;         // initial tail (coefficients above N), order T
    int N = 0, T = 0;

    CompositeState(const SpectralField& u0, int N_, int T_) : N(N_), T(T_) {
        const SpectralField padded = project(u0, T);
        head = project(padded, N).packed();
        SpectralField t(T);
        for (int n = N + 1; n <= T; ++n) {
            t.a[n] = padded.a[n];
            t.b[n - 1] = padded.b[n - 1];
        }
        tail0 = t;
    }

    SpectralField assemble(double t) const {
        SpectralField out = linear_flow(tail0, t);
        for (int n = 0; n <= N; ++n) out.a[n] = head[n];
        for (int n = 1; n <= N; ++n) out.b[n - 1] = head[N + n];
        return out;
    }
};

}  // namespace detail

/// Integrates the selected flow through the given output times (starting at
/// t = 0). Composite kinds split the state at order N and rotate the tail
/// exactly. Conserved series are recorded at every output time.
inline Trajectory evolve(const FlowEngine& engine, const SpectralField& u0,
                         const std::vector<double>& out_times) {
    const FlowSpec& spec = engine.spec();
    if (out_times.empty()) throw std::invalid_argument("evolve: no output times");
    if (u0.N > spec.total_order())
        throw std::invalid_argument("evolve: initial order exceeds the flow order");

    Trajectory traj;
    detail::CompositeState st(u0, spec.N, spec.total_order());
    auto work = engine.make_work();
    bool have_fmid = false;
    double t = 0.0;

    const bool record_ev = is_perturbed(spec.kind);
    for (double target : out_times) {
        engine.advance(st.head, target - t, work, traj.diagnostics, have_fmid);
        t = target;
        const SpectralField state = st.assemble(t);
        traj.times.push_back(t);
        traj.conserved["h1_energy"].push_back(h1_energy(state));
        if (spec.kind != FlowKind::linear)
            traj.conserved["hamiltonian"].push_back(
                hamiltonian_h(state, record_ev ? spec.V : std::nullopt, spec.N));
        if (record_ev)
            traj.conserved["energy_ev"].push_back(engine.energy_ev_packed(st.head));
        traj.states.push_back(state);
    }
    return traj;
}

inline Trajectory evolve(const FlowSpec& spec, const SpectralField& u0,
                         const std::vector<double>& out_times) {
    return evolve(FlowEngine(spec), u0, out_times);
}

// ---- Duhamel fixed-point oracle -------------------------------------------

struct PicardResult {
    SpectralField state;
    std::vector<double> residuals;      // trajectory-norm gaps between iterates
    double contraction_max = quiet_nan; // max ratio of successive residuals
    int iterations = 0;
    int nodes = 0;
    double richardson_gap = quiet_nan;  // node-doubling consistency estimate
};

namespace detail {

/// One Picard solve on a fixed node grid; returns the iterates' final state.
inline PicardResult picard_fixed_nodes(const FlowEngine& engine, const Eigen::VectorXd& y0,
                                       double t, double tol, int nodes) {
    const FlowSpec& spec = engine.spec();
    const int N = spec.N;
    const int dim = 2 * N + 1;
    const double h = t / nodes;

    // generator: u' = -G u + Phi(u)
    const TrigOperator G = is_perturbed(spec.kind) ? build_d_n(*spec.V, N) : k_matrix(N);
    std::vector<Eigen::MatrixXd> E(nodes + 1);
    E[0] = Eigen::MatrixXd::Identity(dim, dim);
    const Eigen::MatrixXd E1 = matrix_exp(G, -h).mat;
    for (int k = 1; k <= nodes; ++k) E[k] = E[k - 1] * E1;

    auto work = engine.make_work();
    Eigen::VectorXd lin(dim), full(dim);
    // Phi(u) = F(u) + G u  (subtracting the linear part of the vector field)
    auto phi = [&](const Eigen::VectorXd& y, Eigen::VectorXd& out) {
        engine.rhs(y, full, work);
        out.noalias() = full + G.mat * y;
    };

    std::vector<Eigen::VectorXd> u(nodes + 1, y0), phi_u(nodes + 1, Eigen::VectorXd(dim));
    for (int j = 0; j <= nodes; ++j) u[j] = E[j] * y0;

    PicardResult res;
    res.nodes = nodes;
    std::vector<Eigen::VectorXd> next(nodes + 1, Eigen::VectorXd(dim));
    double prev_res = quiet_nan;
    for (int it = 0; it < 80; ++it) {
        for (int j = 0; j <= nodes; ++j) phi(u[j], phi_u[j]);
        double gap = 0.0;
        next[0] = y0;
        for (int i = 1; i <= nodes; ++i) {
            Eigen::VectorXd acc = 0.5 * (E[i] * phi_u[0] + phi_u[i]);
            for (int j = 1; j < i; ++j) acc.noalias() += E[i - j] * phi_u[j];
            next[i].noalias() = E[i] * y0 + h * acc;
            gap = std::max(gap, (next[i] - u[i]).norm());
        }
        for (int i = 0; i <= nodes; ++i) u[i].swap(next[i]);
        ++res.iterations;
        res.residuals.push_back(gap);
        if (std::isfinite(prev_res) && prev_res > 0.0) {
            const double ratio = gap / prev_res;
            if (!std::isfinite(res.contraction_max) || ratio > res.contraction_max)
                res.contraction_max = ratio;
        }
        if (gap < tol) break;
        if (std::isfinite(prev_res) && gap > 4.0 * prev_res && it > 3)
            throw FlowError("Picard iteration diverges (residual " + std::to_string(gap) + ")",
                            it, gap);
        prev_res = gap;
    }
    res.state = SpectralField::from_packed(N, u[nodes]);
    return res;
}

}  // namespace detail

/// Integrator-independent short-time oracle: the Duhamel fixed point computed
/// by Picard iteration on a trapezoid s-grid, with a node-doubling
/// (Richardson) consistency check. The tail above N rides the exact linear
/// flow.
inline PicardResult picard_duhamel(const FlowSpec& spec_in, const SpectralField& u0, double t,
                                   double tol) {
    FlowSpec spec = spec_in;
    spec.validate();
    FlowEngine engine(spec);
    detail::CompositeState st(u0, spec.N, spec.total_order());

    int nodes = std::max(16, static_cast<int>(std::ceil(spec.nodes_per_unit * std::abs(t))));
    PicardResult res = detail::picard_fixed_nodes(engine, st.head, t, tol, nodes);
    for (int round = 0; round < 4; ++round) {
        PicardResult finer = detail::picard_fixed_nodes(engine, st.head, t, tol, nodes * 2);
        const double gap = (finer.state.packed() - res.state.packed()).norm();
        finer.richardson_gap = gap;
        if (gap < std::max(tol, 1e-10) * 8.0) {
            res = std::move(finer);
            break;
        }
        nodes *= 2;
        res = std::move(finer);
    }

    st.head = res.state.packed();
    res.state = st.assemble(t);
    return res;
}

/// Largest time with Picard contraction factor <= 1/2 determines the fitted
/// local-existence constant: T* = 1/(8 c_hat^2 R).
inline double calibrate_c_hat(FlowSpec spec, double s, double R, int corpus_size,
                              std::uint64_t seed) {
    spec.validate();
    auto corpus_member = [&](std::uint64_t k) {
        SeededRng rng(seed, stream_ns::corpus + k);
        SpectralField u(spec.total_order());
        for (int n = 0; n <= u.N; ++n) u.a[n] = rng.normal() / (1.0 + double(n) * n);
        for (int n = 1; n <= u.N; ++n) u.b[n - 1] = rng.normal() / (1.0 + double(n) * n);
        const double norm = sobolev_norm(u, s);
        return SpectralField(u.a * (R / norm), u.b * (R / norm));
    };
    auto contraction_ok = [&](double T) {
        for (int k = 0; k < corpus_size; ++k) {
            const PicardResult r = picard_duhamel(spec, corpus_member(k), T, 1e-12);
            if (!(r.contraction_max <= 0.5)) return false;
        }
        return true;
    };
    double T = 1.0 / (8.0 * 4.0 * R);  // start from c_hat = 2
    if (contraction_ok(T)) {
        while (T < 64.0 && contraction_ok(2.0 * T)) T *= 2.0;
    } else {
        while (T > 1e-4 && !contraction_ok(T)) T /= 2.0;
    }
    return std::sqrt(1.0 / (8.0 * T * R));
}

inline double contraction_horizon(double c_hat, double R) {
    return 1.0 / (8.0 * c_hat * c_hat * std::max(R, 1e-12));
}

// ---- convergence and splitting diagnostics ---------------------------------

/// Smallest N whose tail mass satisfies |(1-Pi_N) u0|_{L2} <= 1/(C (1+|T|)).
inline int split_order(const SpectralField& u0, double T, double c_hat) {
    if (!(c_hat > 0)) throw std::invalid_argument("split_order: c_hat must be positive");
    const double threshold = 1.0 / (c_hat * (1.0 + std::abs(T)));
    std::vector<double> suffix(u0.N + 2, 0.0);
    for (int n = u0.N; n >= 1; --n)
        suffix[n] = suffix[n + 1] + u0.a[n] * u0.a[n] + u0.b[n - 1] * u0.b[n - 1];
    for (int N = 0; N <= u0.N; ++N)
        if (std::sqrt(suffix[N + 1]) <= threshold) return N;
    return u0.N;
}

struct ConvergenceReport {
    std::vector<int> orders;
    std::vector<double> errors;  // |u_ref(t) - u_N(t)|_{L2}
    double slope = quiet_nan;    // log err vs log N
    bool strictly_decreasing = false;
    int reference_order = 0;
};

/// Evolves u0 under the composite flow at each order and at the reference
/// order 4 max(orders), and reports the L2 gaps at time t.
inline ConvergenceReport flow_convergence(const SpectralField& u0, const std::vector<int>& orders,
                                          double t, const FlowSpec& tmpl) {
    ConvergenceReport rep;
    rep.orders = orders;
    rep.reference_order = 4 * *std::max_element(orders.begin(), orders.end());
    const int total = std::max(u0.N, rep.reference_order);

    auto run = [&](int N) {
        FlowSpec spec = tmpl;
        spec.kind = is_perturbed(tmpl.kind) ? FlowKind::composite_perturbed
                                            : FlowKind::composite_bbm;
        spec.N = N;
        spec.N_tail = total - N;
        return evolve(spec, u0, {t}).final_state();
    };

    const Eigen::VectorXd ref = run(rep.reference_order).packed();
    std::vector<double> xs, ys;
    for (int N : orders) {
        const double err = (run(N).packed() - ref).norm();
        rep.errors.push_back(err);
        if (err > 0) {
            xs.push_back(std::log(double(N)));
            ys.push_back(std::log(err));
        }
    }
    rep.strictly_decreasing = true;
    for (std::size_t i = 0; i + 1 < rep.errors.size(); ++i)
        if (!(rep.errors[i + 1] < rep.errors[i])) rep.strictly_decreasing = false;
    if (xs.size() >= 2) rep.slope = fit_line(xs, ys).slope;
    return rep;
}

}  // namespace bbmgibbs
