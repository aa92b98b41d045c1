#pragma once

#include <bbmgibbs/rng.hpp>
#include <bbmgibbs/spectral.hpp>
#include <bbmgibbs/trig_operator.hpp>

#include <unsupported/Eigen/FFT>

#include <cctype>
#include <complex>
#include <cstdint>
#include <cstring>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace bbmgibbs {

namespace detail {

/// Full spectrum of real grid samples: vhat[k] = (1/M) sum_j v_j e^{-ikx_j}.
inline std::vector<std::complex<double>> full_spectrum(const Eigen::VectorXd& samples) {
    Eigen::FFT<double> fft;
    std::vector<double> in(samples.data(), samples.data() + samples.size());
    std::vector<std::complex<double>> spec;
    fft.fwd(spec, in);
    for (auto& c : spec) c /= static_cast<double>(samples.size());
    return spec;
}

inline Eigen::VectorXd spectral_derivative(const std::vector<std::complex<double>>& vhat,
                                           int order) {
    const int M = static_cast<int>(vhat.size());
    std::vector<std::complex<double>> spec(M, 0.0);
    const std::complex<double> i(0.0, 1.0);
    for (int k = 1; k < M / 2; ++k) {
        std::complex<double> f = 1.0;
        for (int r = 0; r < order; ++r) f *= i * static_cast<double>(k);
        spec[k] = f * vhat[k];
        spec[M - k] = std::conj(spec[k]);
    }
    Eigen::FFT<double> fft;
    for (auto& c : spec) c *= static_cast<double>(M);
    std::vector<double> out;
    fft.inv(out, spec);
    return Eigen::Map<Eigen::VectorXd>(out.data(), M);
}

inline FourierCoeffs coeffs_from_spectrum(const std::vector<std::complex<double>>& vhat,
                                          int band) {
    const int M = static_cast<int>(vhat.size());
    if (band >= M / 2)
        throw std::invalid_argument("fourier band must be below the grid Nyquist limit");
    FourierCoeffs f;
    f.p = Eigen::VectorXd::Zero(band + 1);
    f.q = Eigen::VectorXd::Zero(band + 1);
    f.p[0] = vhat[0].real();
    for (int k = 1; k <= band; ++k) {
        f.p[k] = 2.0 * vhat[k].real();
        f.q[k] = -2.0 * vhat[k].imag();
    }
    double tail = 0.0;
    for (int k = band + 1; k <= M / 2; ++k) tail += std::norm(vhat[k]);
    f.tail_mass = 2.0 * std::sqrt(tail);
    return f;
}

}  // namespace detail

/// The perturbation V: grid samples of a C^2 periodic function together with
/// the norm certificate |V|_Linf + |V'|_Linf + |V''|_Linf <= 1/2, enforced at
/// construction. Derivatives are taken spectrally, so sample input is read as
/// its band-limited interpolant.
class Potential {
public:
    static constexpr double admissible_bound = 0.5;
    static constexpr int default_grid = 4096;

    static Potential zero(int M = default_grid) {
        return Potential(Eigen::VectorXd::Zero(M), "0");
    }

    static Potential from_samples(Eigen::VectorXd samples, std::string label = "") {
        return Potential(std::move(samples), std::move(label));
    }

    /// Finite sums "a*cos(k*x) + b*sin(m x) + c" with decimal or rational
    /// coefficients.
    static Potential from_expression(const std::string& expr, int M = default_grid);

    int grid_size() const { return static_cast<int>(samples_.size()); }
    const Eigen::VectorXd& samples() const { return samples_; }
    const std::string& label() const { return label_; }

    double linf() const { return linf_; }
    double d1_linf() const { return d1_linf_; }
    double d2_linf() const { return d2_linf_; }
    /// The certified smallness norm |V|_inf = |V| + |V'| + |V''| (sup norms).
    double total_norm() const { return linf_ + d1_linf_ + d2_linf_; }
    bool is_zero() const { return linf_ == 0.0; }

    std::uint64_t fingerprint() const { return fingerprint_; }

    /// Fourier data of V itself.
    FourierCoeffs fourier(int band) const {
        return detail::coeffs_from_spectrum(spectrum_, band);
    }

    /// Fourier data of g(V(x)) for a pointwise map g (e.g. (1+v)^{-1/2}).
    FourierCoeffs mapped_fourier(const std::function<double(double)>& g, int band) const {
        Eigen::VectorXd mapped(samples_.size());
        for (int j = 0; j < samples_.size(); ++j) mapped[j] = g(samples_[j]);
        return detail::coeffs_from_spectrum(detail::full_spectrum(mapped), band);
    }

    GridFunction mapped_grid(const std::function<double(double)>& g) const {
        Eigen::VectorXd mapped(samples_.size());
        for (int j = 0; j < samples_.size(); ++j) mapped[j] = g(samples_[j]);
        return GridFunction(grid_size(), std::move(mapped));
    }

    static double sqrt1p(double v) { return std::sqrt(1.0 + v); }
    static double inv_sqrt1p(double v) { return 1.0 / std::sqrt(1.0 + v); }

private:
    Potential(Eigen::VectorXd samples, std::string label)
        : samples_(std::move(samples)), label_(std::move(label)) {
        const int M = grid_size();
        if (M < 16) throw std::invalid_argument("Potential: need at least 16 grid samples");
        if (!samples_.allFinite()) throw std::invalid_argument("Potential: non-finite sample");
        spectrum_ = detail::full_spectrum(samples_);
        linf_ = samples_.cwiseAbs().maxCoeff();
        d1_linf_ = detail::spectral_derivative(spectrum_, 1).cwiseAbs().maxCoeff();
        d2_linf_ = detail::spectral_derivative(spectrum_, 2).cwiseAbs().maxCoeff();
        if (total_norm() > admissible_bound)
            throw std::invalid_argument(
                "Potential: smallness certificate violated, |V|+|V'|+|V''| = " +
                std::to_string(total_norm()) + " > 1/2");
        fingerprint_ = hash_samples();
    }

    std::uint64_t hash_samples() const {
        std::uint64_t h = 0x9E3779B97F4A7C15ull;
        for (int j = 0; j < samples_.size(); ++j) {
            std::uint64_t bits;
            const double v = samples_[j];
            static_assert(sizeof(bits) == sizeof(v));
            std::memcpy(&bits, &v, sizeof(bits));
            h = SeededRng::splitmix64(h ^ bits);
        }
        return h;
    }

    Eigen::VectorXd samples_;
    std::string label_;
    std::vector<std::complex<double>> spectrum_;
    double linf_ = 0, d1_linf_ = 0, d2_linf_ = 0;
    std::uint64_t fingerprint_ = 0;
};

namespace detail {

struct TrigTerm {
    double coef = 0.0;
    int wavenumber = 0;  // 0 means constant term
    bool is_sin = false;
};

/// Parses "0.1*cos(x) - 1/8*sin(2*x) + 0.05".
inline std::vector<TrigTerm> parse_trig_sum(const std::string& text) {
    std::vector<TrigTerm> terms;
    size_t i = 0;
    const auto skip_ws = [&] { while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i; };
    const auto parse_number = [&]() -> double {
        skip_ws();
        size_t end = i;
        while (end < text.size() &&
               (std::isdigit(static_cast<unsigned char>(text[end])) || text[end] == '.' ||
                text[end] == 'e' || text[end] == 'E' ||
                ((text[end] == '+' || text[end] == '-') && end > i &&
                 (text[end - 1] == 'e' || text[end - 1] == 'E'))))
            ++end;
        if (end == i) throw std::invalid_argument("potential expression: expected a number near '" +
                                                  text.substr(i, 8) + "'");
        const double v = std::stod(text.substr(i, end - i));
        i = end;
        skip_ws();
        if (i < text.size() && text[i] == '/') {
            ++i;
            skip_ws();
            size_t dend = i;
            while (dend < text.size() && (std::isdigit(static_cast<unsigned char>(text[dend])) || text[dend] == '.'))
                ++dend;
            if (dend == i) throw std::invalid_argument("potential expression: bad rational");
            const double den = std::stod(text.substr(i, dend - i));
            i = dend;
            if (den == 0.0) throw std::invalid_argument("potential expression: division by zero");
            return v / den;
        }
        return v;
    };

    bool first = true;
    skip_ws();
    while (i < text.size()) {
        double sign = 1.0;
        skip_ws();
        if (i < text.size() && (text[i] == '+' || text[i] == '-')) {
            sign = (text[i] == '-') ? -1.0 : 1.0;
            ++i;
        } else if (!first) {
            throw std::invalid_argument("potential expression: expected '+' or '-'");
        }
        first = false;
        skip_ws();

        double coef = 1.0;
        bool have_coef = false;
        if (i < text.size() && (std::isdigit(static_cast<unsigned char>(text[i])) || text[i] == '.')) {
            coef = parse_number();
            have_coef = true;
            skip_ws();
            if (i < text.size() && text[i] == '*') {
                ++i;
                skip_ws();
            }
        }

        TrigTerm term;
        term.coef = sign * coef;
        if (i + 3 <= text.size() && (text.compare(i, 3, "cos") == 0 || text.compare(i, 3, "sin") == 0)) {
            term.is_sin = text.compare(i, 3, "sin") == 0;
            i += 3;
            skip_ws();
            if (i >= text.size() || text[i] != '(')
                throw std::invalid_argument("potential expression: expected '(' after cos/sin");
            ++i;
            skip_ws();
            int k = 1;
            if (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
                size_t end = i;
                while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
                k = std::stoi(text.substr(i, end - i));
                i = end;
                skip_ws();
                if (i < text.size() && text[i] == '*') {
                    ++i;
                    skip_ws();
                }
            }
            if (i >= text.size() || text[i] != 'x')
                throw std::invalid_argument("potential expression: expected 'x' in cos/sin argument");
            ++i;
            skip_ws();
            if (i >= text.size() || text[i] != ')')
                throw std::invalid_argument("potential expression: expected ')'");
            ++i;
            term.wavenumber = k;
        } else if (!have_coef) {
            throw std::invalid_argument("potential expression: expected coefficient or cos/sin near '" +
                                        text.substr(i, 8) + "'");
        }
        terms.push_back(term);
        skip_ws();
    }
    return terms;
}

}  // namespace detail

inline Potential Potential::from_expression(const std::string& expr, int M) {
    const auto terms = detail::parse_trig_sum(expr);
    Eigen::VectorXd samples = Eigen::VectorXd::Zero(M);
    for (int j = 0; j < M; ++j) {
        const double x = GridFunction::node(j, M);
        double v = 0.0;
        for (const auto& t : terms) {
            if (t.wavenumber == 0)
                v += t.coef;
            else
                v += t.coef * (t.is_sin ? std::sin(t.wavenumber * x) : std::cos(t.wavenumber * x));
        }
        samples[j] = v;
    }
    return Potential(std::move(samples), expr);
}

}  // namespace bbmgibbs
