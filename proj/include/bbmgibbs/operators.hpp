#pragma once

#include <bbmgibbs/potential.hpp>
#include <bbmgibbs/reports.hpp>
#include <bbmgibbs/rng.hpp>
#include <bbmgibbs/spectral.hpp>
#include <bbmgibbs/trig_operator.hpp>

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <optional>
#include <stdexcept>

namespace bbmgibbs {

/// V_N = Pi_N sqrt(1+V) Pi_N. Symmetric; |V_N| <= 2 and |V_N^{-1}| <= 4 for
/// admissible V.
inline TrigOperator build_v_n(const Potential& V, int N) {
    return mult_operator(V.mapped_fourier(Potential::sqrt1p, 2 * N), N);
}

struct InverseBuild {
    TrigOperator inv;
    double condition = 0.0;
};

/// Dense inverse with a condition-number report. Admissible potentials keep
/// these operators far from singular; anything past 1e8 indicates corrupted
/// input and is refused.
inline InverseBuild inverse_with_cond(const TrigOperator& op) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(op.mat);
    const auto& sv = svd.singularValues();
    const double cond = sv[0] / sv[sv.size() - 1];
    if (!(cond < 1e8))
        throw std::runtime_error("inverse_with_cond: condition number " + std::to_string(cond));
    return {TrigOperator(op.N, op.mat.partialPivLu().inverse()), cond};
}

/// W_N = V_N (1 - d_x^2) V_N; symmetric positive definite.
inline TrigOperator build_w_n(const Potential& V, int N) {
    const TrigOperator vn = build_v_n(V, N);
    return TrigOperator(N, vn.mat * h_power_matrix(N, 2.0).mat * vn.mat);
}

/// J_N = V_N^{-1} H^{-2} d_x V_N^{-1} (equivalently W_N^{-1} V_N d_x V_N^{-1});
/// antisymmetric.
inline TrigOperator build_j_n(const Potential& V, int N) {
    const TrigOperator vinv = inverse_with_cond(build_v_n(V, N)).inv;
    return TrigOperator(
        N, vinv.mat * h_power_matrix(N, -2.0).mat * dx_matrix(N).mat * vinv.mat);
}

/// The W_N^{-1}-route formula for J_N, kept for the consistency check.
inline TrigOperator build_j_n_via_w(const Potential& V, int N) {
    const TrigOperator vn = build_v_n(V, N);
    const TrigOperator winv = inverse_with_cond(build_w_n(V, N)).inv;
    const TrigOperator vinv = inverse_with_cond(vn).inv;
    return TrigOperator(N, winv.mat * vn.mat * dx_matrix(N).mat * vinv.mat);
}

/// D_N = V_N^{-1} K V_N on E_0^N (similar to K_N, so its spectrum is purely
/// imaginary).
inline TrigOperator build_d_n(const Potential& V, int N) {
    const TrigOperator vn = build_v_n(V, N);
    const TrigOperator vinv = inverse_with_cond(vn).inv;
    return TrigOperator(N, vinv.mat * k_matrix(N).mat * vn.mat);
}

/// e^{t A} by scaling and squaring (Pade) on the dense matrix.
inline TrigOperator matrix_exp(const TrigOperator& A, double t = 1.0) {
    return TrigOperator(A.N, (t * A.mat).exp());
}

/// Band-limited field of a pointwise map of V (e.g. sqrt(1+V)), in the
/// orthonormal basis.
inline SpectralField multiplier_field(const Potential& V,
                                      const std::function<double(double)>& map, int band) {
    const FourierCoeffs f = V.mapped_fourier(map, band);
    SpectralField u(band);
    u.a[0] = f.p[0] * std::sqrt(two_pi);
    for (int k = 1; k <= band; ++k) {
        u.a[k] = f.p[k] * std::sqrt(M_PI);
        u.b[k - 1] = f.q[k] * std::sqrt(M_PI);
    }
    return u;
}

/// The continuum operator D = (1+V)^{-1/2} K (1+V)^{1/2} applied through
/// band-limited multiplier surrogates at a reference order: multiply by the
/// band-limited sqrt(1+V), apply K exactly, multiply by the band-limited
/// (1+V)^{-1/2}, project back to n_ref.
inline SpectralField apply_d(const Potential& V, const SpectralField& u, int n_ref,
                             int band = -1) {
    if (band < 0) band = n_ref;
    const SpectralField plus = multiplier_field(V, Potential::sqrt1p, band);
    const SpectralField minus = multiplier_field(V, Potential::inv_sqrt1p, band);
    return project(multiply(minus, apply_k(multiply(plus, u))), n_ref);
}

/// One smoothing ratio |K(g(uv))|_{H^s} / (|g| |u|_{L2} |v|_{L2}).
inline double bilinear_ratio(const std::optional<TrigOperator>& g, const SpectralField& u,
                             const SpectralField& v, double s) {
    const SpectralField uv = multiply(u, v);
    SpectralField guv = uv;
    double gnorm = 1.0;
    if (g) {
        guv = project(g->apply(project(uv, g->N)), uv.N);
        gnorm = exp_basis_l1_norm(*g);
    }
    return sobolev_norm(apply_k(guv), s) / (gnorm * l2_norm(u) * l2_norm(v));
}

/// Randomized empirical constant for the bilinear smoothing estimate: the
/// maximum ratio over a corpus of random L^2-normalized pairs.
inline StatReport bilinear_smoothing_check(const std::optional<TrigOperator>& g, int N,
                                           double s, std::size_t count, std::uint64_t seed) {
    if (!(s < 0.5)) throw std::invalid_argument("bilinear_smoothing_check: s must be < 1/2");
    StatReport rep;
    rep.name = "bilinear_smoothing_check";
    rep.seed = seed;
    rep.count = count;
    double worst = 0.0;
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng rng(seed, stream_ns::corpus + k);
        SpectralField u(N), v(N);
        for (int n = 0; n <= N; ++n) {
            u.a[n] = rng.normal();
            v.a[n] = rng.normal();
        }
        for (int n = 1; n <= N; ++n) {
            u.b[n - 1] = rng.normal();
            v.b[n - 1] = rng.normal();
        }
        worst = std::max(worst, bilinear_ratio(g, u, v, s));
    }
    Estimate e;
    e.label = "max ratio |K(g(uv))|_{H^s} / (|g| |u| |v|)";
    e.value = worst;
    rep.estimates.push_back(e);
    rep.extra["s"] = s;
    rep.extra["N"] = N;
    return rep;
}

}  // namespace bbmgibbs
