#pragma once

#include <bbmgibbs/potential.hpp>
#include <bbmgibbs/reports.hpp>
#include <bbmgibbs/rng.hpp>
#include <bbmgibbs/spectral.hpp>
#include <bbmgibbs/trig_operator.hpp>

#include <complex>
#include <optional>
#include <stdexcept>
#include <vector>

namespace bbmgibbs {

/// Matrix of Pi_N (1+V)^{-1/2} H^{-1} Pi_N in the packed basis. The symbol
/// (1+V)^{-1/2} is evaluated pointwise on the oversampled grid and band
/// limited at 2N; the discarded coefficient mass is returned, not assumed
/// small.
struct BBuild {
    TrigOperator B;
    double band_tail_mass = 0.0;
};

inline BBuild build_b(const Potential& V, int N) {
    const FourierCoeffs f = V.mapped_fourier(Potential::inv_sqrt1p, 2 * N);
    BBuild out;
    out.B = mult_operator(f, N) * h_power_matrix(N, -1.0);
    out.band_tail_mass = f.tail_mass;
    return out;
}

/// Specification of one of the two Gaussian measures at truncation order N:
/// the diagonal measure mu (mode variances 1/(1+n^2)) or the perturbed
/// measure mu_V with coefficient vector B g. `tail_order` extra modes extend
/// either one with independent diagonal modes, realizing the product measure
/// used by the split flows.
struct GaussianSpec {
    enum class Kind { diagonal_mu, perturbed_mu_v };

    Kind kind = Kind::diagonal_mu;
    int N = 0;
    int tail_order = 0;
    std::optional<Potential> V;
    TrigOperator B;               // identity-scaled diag for diagonal_mu is implicit
    double b_band_tail_mass = 0;  // from build_b

    static GaussianSpec diagonal(int order, int tail = 0) {
        GaussianSpec s;
        s.kind = Kind::diagonal_mu;
        s.N = order;
        s.tail_order = tail;
        return s;
    }

    static GaussianSpec perturbed(const Potential& v, int order, int tail = 0) {
        GaussianSpec s;
        s.kind = Kind::perturbed_mu_v;
        s.N = order;
        s.tail_order = tail;
        s.V = v;
        BBuild b = build_b(v, order);
        s.B = std::move(b.B);
        s.b_band_tail_mass = b.band_tail_mass;
        return s;
    }

    int total_order() const { return N + tail_order; }
};

/// Draws phi^N from mu: a_n = g_n / sqrt(1+n^2), b_n = h_n / sqrt(1+n^2).
/// Draw order is the packed basis order (g_0..g_N, then h_1..h_N).
inline SpectralField sample_mu(int N, SeededRng& rng) {
    SpectralField u(N);
    for (int n = 0; n <= N; ++n) u.a[n] = rng.normal() / std::sqrt(1.0 + double(n) * n);
    for (int n = 1; n <= N; ++n) u.b[n - 1] = rng.normal() / std::sqrt(1.0 + double(n) * n);
    return u;
}

namespace detail {
/// Tail modes N+1..total drawn as (g_n, h_n) pairs in ascending n.
inline void fill_diagonal_tail(SpectralField& u, int from, SeededRng& rng) {
    for (int n = from; n <= u.N; ++n) {
        const double r = 1.0 / std::sqrt(1.0 + double(n) * n);
        u.a[n] = r * rng.normal();
        u.b[n - 1] = r * rng.normal();
    }
}
}  // namespace detail

/// Draws phi_V^N = B g^N (g^N standard normal in packed order), plus the
/// independent diagonal tail when the spec carries one.
inline SpectralField sample_mu_v(const GaussianSpec& spec, SeededRng& rng) {
    if (spec.kind != GaussianSpec::Kind::perturbed_mu_v)
        throw std::invalid_argument("sample_mu_v: spec is not perturbed");
    Eigen::VectorXd g(2 * spec.N + 1);
    for (int i = 0; i < g.size(); ++i) g[i] = rng.normal();
    const Eigen::VectorXd head = spec.B.mat * g;
    SpectralField u(spec.total_order());
    u.a.head(spec.N + 1) = head.head(spec.N + 1);
    u.b.head(spec.N) = head.tail(spec.N);
    detail::fill_diagonal_tail(u, spec.N + 1, rng);
    return u;
}

/// Sampler dispatch; draw order is identical for both kinds, so the diagonal
/// measure and the V = 0 perturbed measure consume the same stream layout.
inline SpectralField sample(const GaussianSpec& spec, SeededRng& rng) {
    if (spec.kind == GaussianSpec::Kind::diagonal_mu) return sample_mu(spec.total_order(), rng);
    return sample_mu_v(spec, rng);
}

/// Exact covariance of the packed coefficient vector at total order:
/// B B^T scattered on the head block, diag(1/(1+n^2)) on the tail.
inline TrigOperator covariance(const GaussianSpec& spec) {
    const int T = spec.total_order();
    const int d = 2 * T + 1;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(d, d);
    if (spec.kind == GaussianSpec::Kind::diagonal_mu) {
        for (int n = 0; n <= T; ++n) {
            const double v = 1.0 / (1.0 + double(n) * n);
            C(n, n) = v;
            if (n >= 1) C(T + n, T + n) = v;
        }
        return TrigOperator(T, std::move(C));
    }
    const Eigen::MatrixXd BBt = spec.B.mat * spec.B.mat.transpose();
    const int N = spec.N;
    auto tot = [&](int i) { return i <= N ? i : T + (i - N); };
    for (int i = 0; i < 2 * N + 1; ++i)
        for (int j = 0; j < 2 * N + 1; ++j) C(tot(i), tot(j)) = BBt(i, j);
    for (int n = N + 1; n <= T; ++n) {
        const double v = 1.0 / (1.0 + double(n) * n);
        C(n, n) = v;
        C(T + n, T + n) = v;
    }
    return TrigOperator(T, std::move(C));
}

/// Closed-form characteristic functional of the centred Gaussian measure:
/// Z(lambda) = exp(-1/2 lambda^T C lambda). Real-valued and in (0, 1].
inline std::complex<double> char_fn_closed(const GaussianSpec& spec, const SpectralField& lambda) {
    if (lambda.N > spec.total_order())
        throw std::invalid_argument("char_fn_closed: probe order exceeds the measure order");
    const Eigen::VectorXd l = project(lambda, spec.total_order()).packed();
    const TrigOperator C = covariance(spec);
    const double quad = l.dot(C.mat * l);
    return {std::exp(-0.5 * quad), 0.0};
}

/// Empirical tail of |phi|_{H^s}: exceedance frequencies per radius and the
/// fitted slope of log P against R^2 (Gaussian concentration shows up as a
/// negative slope with a concave-decreasing profile).
inline StatReport tail_diagnostic(const GaussianSpec& spec, double s,
                                  const std::vector<double>& radii, std::size_t samples,
                                  std::uint64_t seed) {
    if (!(s < 0.5)) throw std::invalid_argument("tail_diagnostic: s must be < 1/2");
    StatReport rep;
    rep.name = "tail_diagnostic";
    rep.seed = seed;
    rep.count = samples;

    std::vector<double> norms(samples);
    for (std::size_t k = 0; k < samples; ++k) {
        SeededRng rng(seed, stream_ns::tails + k);
        norms[k] = sobolev_norm(sample(spec, rng), s);
    }

    std::vector<double> xs, ys;
    for (double R : radii) {
        std::size_t count = 0;
        for (double v : norms) count += (v > R);
        const double freq = double(count) / double(samples);
        Estimate e;
        e.label = "P(|phi|_{H^s} > " + std::to_string(R) + ")";
        e.value = freq;
        e.std_error = std::sqrt(std::max(freq * (1 - freq), 0.0) / double(samples));
        rep.estimates.push_back(e);
        if (count >= 20) {  // keep the fit away from pure-noise bins
            xs.push_back(R * R);
            ys.push_back(std::log(freq));
        }
    }

    rep.extra["s"] = s;
    rep.extra["fit_points"] = xs.size();
    if (xs.size() >= 2) {
        const LineFit f = fit_line(xs, ys);
        rep.extra["slope_logP_vs_R2"] = f.slope;
        if (std::isfinite(f.slope_stderr)) rep.extra["slope_stderr"] = f.slope_stderr;

        bool nonincreasing = true;
        for (std::size_t i = 0; i + 1 < rep.estimates.size(); ++i)
            if (rep.estimates[i + 1].value > rep.estimates[i].value + 1e-15) nonincreasing = false;
        rep.verdicts.push_back({"frequencies_nonincreasing", nonincreasing,
                                nonincreasing ? 1.0 : 0.0, 1.0, "nested events"});
        rep.verdicts.push_back({"negative_tail_slope", f.slope < 0.0, f.slope, 0.0,
                                "log P vs R^2 must decrease"});

        // concavity within the binomial noise of the chord slopes
        bool concave = true;
        double prev_slope = quiet_nan, prev_noise = 0.0;
        for (std::size_t i = 0; i + 1 < xs.size(); ++i) {
            const double dy = ys[i + 1] - ys[i], dx = xs[i + 1] - xs[i];
            const double p1 = std::exp(ys[i]), p2 = std::exp(ys[i + 1]);
            const double se1 = std::sqrt((1 - p1) / (p1 * samples));
            const double se2 = std::sqrt((1 - p2) / (p2 * samples));
            const double noise = std::sqrt(se1 * se1 + se2 * se2) / dx;
            const double chord = dy / dx;
            if (std::isfinite(prev_slope) && chord > prev_slope + 3.0 * (noise + prev_noise))
                concave = false;
            prev_slope = chord;
            prev_noise = noise;
        }
        rep.verdicts.push_back({"concave_decreasing", concave, concave ? 1.0 : 0.0, 1.0,
                                "chord slopes nonincreasing within noise"});
    }
    return rep;
}

/// Exceedance radii at fixed empirical quantiles, a convenient radius ladder
/// for tail fits.
inline std::vector<double> quantile_radii(const GaussianSpec& spec, double s,
                                          std::size_t samples, std::uint64_t seed,
                                          const std::vector<double>& tail_probs) {
    std::vector<double> norms(samples);
    for (std::size_t k = 0; k < samples; ++k) {
        SeededRng rng(seed, stream_ns::tails + k);
        norms[k] = sobolev_norm(sample(spec, rng), s);
    }
    std::sort(norms.begin(), norms.end());
    std::vector<double> radii;
    for (double p : tail_probs) {
        const auto idx = static_cast<std::size_t>((1.0 - p) * (samples - 1));
        radii.push_back(norms[idx]);
    }
    return radii;
}

}  // namespace bbmgibbs
