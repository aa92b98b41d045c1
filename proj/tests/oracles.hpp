#pragma once

// Test-only reference routes, kept independent of the library's transform
// paths: products by direct coefficient convolution, inner products by
// long-form quadrature, derivatives by finite differences.

#include <bbmgibbs/rng.hpp>
#include <bbmgibbs/spectral.hpp>

#include <complex>
#include <functional>
#include <vector>

namespace oracle {

using bbmgibbs::SpectralField;

/// Exact product via O(N^2) convolution of complex exponential coefficients.
inline SpectralField conv_multiply(const SpectralField& u, const SpectralField& v) {
    const int P = u.N + v.N;
    auto to_exp = [](const SpectralField& f) {
        std::vector<std::complex<double>> c(2 * f.N + 1);
        const double r0 = 1.0 / std::sqrt(bbmgibbs::two_pi);
        const double rn = 0.5 / std::sqrt(M_PI);
        c[f.N] = f.a[0] * r0;
        for (int n = 1; n <= f.N; ++n) {
            c[f.N + n] = std::complex<double>(f.a[n] * rn, -f.b[n - 1] * rn);
            c[f.N - n] = std::conj(c[f.N + n]);
        }
        return c;
    };
    const auto cu = to_exp(u);
    const auto cv = to_exp(v);
    std::vector<std::complex<double>> cw(2 * P + 1);
    for (int i = 0; i < static_cast<int>(cu.size()); ++i)
        for (int j = 0; j < static_cast<int>(cv.size()); ++j)
            cw[i + j] += cu[i] * cv[j];

    SpectralField w(P);
    w.a[0] = cw[P].real() * std::sqrt(bbmgibbs::two_pi);
    for (int n = 1; n <= P; ++n) {
        w.a[n] = 2.0 * std::sqrt(M_PI) * cw[P + n].real();
        w.b[n - 1] = -2.0 * std::sqrt(M_PI) * cw[P + n].imag();
    }
    return w;
}

/// Quadrature of f on an explicit uniform grid (no library transforms).
inline double quad(const std::function<double(double)>& f, int M = 4096) {
    double s = 0.0;
    for (int j = 0; j < M; ++j) s += f(bbmgibbs::two_pi * j / M);
    return s * bbmgibbs::two_pi / M;
}

/// Random field with iid N(0, scale^2) coefficients.
inline SpectralField random_field(int N, bbmgibbs::SeededRng& rng, double scale = 1.0) {
    SpectralField u(N);
    for (int n = 0; n <= N; ++n) u.a[n] = scale * rng.normal();
    for (int n = 1; n <= N; ++n) u.b[n - 1] = scale * rng.normal();
    return u;
}

/// Random field distributed as the order-N Gaussian free field (mode
/// variances 1/(1+n^2)), written out longhand.
inline SpectralField random_mu_field(int N, bbmgibbs::SeededRng& rng) {
    SpectralField u(N);
    for (int n = 0; n <= N; ++n) u.a[n] = rng.normal() / std::sqrt(1.0 + double(n) * n);
    for (int n = 1; n <= N; ++n) u.b[n - 1] = rng.normal() / std::sqrt(1.0 + double(n) * n);
    return u;
}

}  // namespace oracle
