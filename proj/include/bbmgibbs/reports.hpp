#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace bbmgibbs {

using json = nlohmann::json;

inline constexpr double quiet_nan = std::numeric_limits<double>::quiet_NaN();

/// One estimator output with its Monte Carlo error and, when a reference
/// value exists, the standardized deviation z = (value - ref) / stderr.
struct Estimate {
    std::string label;
    double time = 0.0;
    double value = 0.0;
    double value_im = 0.0;
    double std_error = 0.0;
    double ref = quiet_nan;
    double z = quiet_nan;
};

struct Verdict {
    std::string name;
    bool pass = false;
    double observed = quiet_nan;
    double threshold = quiet_nan;
    std::string note;
};

struct StatReport {
    std::string name;
    std::uint64_t seed = 0;
    std::size_t count = 0;
    std::vector<Estimate> estimates;
    std::vector<Verdict> verdicts;
    json extra;  // fitted slopes, raw moment sums, diagnostics

    bool all_pass() const {
        for (const auto& v : verdicts)
            if (!v.pass) return false;
        return true;
    }

    json to_json() const {
        json j;
        j["name"] = name;
        j["seed"] = seed;
        j["count"] = count;
        j["estimates"] = json::array();
        for (const auto& e : estimates) {
            json je{{"label", e.label}, {"t", e.time},      {"value", e.value},
                    {"im", e.value_im}, {"stderr", e.std_error}};
            if (std::isfinite(e.ref)) je["ref"] = e.ref;
            if (std::isfinite(e.z)) je["z"] = e.z;
            j["estimates"].push_back(je);
        }
        j["verdicts"] = json::array();
        for (const auto& v : verdicts)
            j["verdicts"].push_back({{"name", v.name},
                                     {"pass", v.pass},
                                     {"observed", v.observed},
                                     {"threshold", v.threshold},
                                     {"note", v.note}});
        if (!extra.is_null()) j["extra"] = extra;
        return j;
    }
};

// ---- small statistics helpers ------------------------------------------

/// Inverse standard normal CDF (Acklam's rational approximation, ~1e-9).
inline double inverse_normal_cdf(double p) {
    if (!(p > 0.0 && p < 1.0)) throw std::invalid_argument("inverse_normal_cdf: p in (0,1)");
    static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                               -2.759285104469687e+02, 1.383577518672690e+02,
                               -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                               -1.556989798598866e+02, 6.680131188771972e+01,
                               -1.328068155288572e+01};
    static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                               -2.400758277161838e+00, -2.549732539343734e+00,
                               4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                               2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425, phigh = 1 - plow;
    double q, r, x;
    if (p < plow) {
        q = std::sqrt(-2 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    } else if (p <= phigh) {
        q = p - 0.5;
        r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1);
    } else {
        q = std::sqrt(-2 * std::log(1 - p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1);
    }
    return x;
}

/// Two-sided family-wise acceptance threshold for standardized deviations.
/// Equality claims are gated at the conventional 3-sigma level; when a claim
/// covers m simultaneous comparisons the per-comparison level is tightened
/// (Sidak) so the family keeps the single-test false-alarm rate. m = 1 gives
/// exactly 3.0.
inline double familywise_z(std::size_t m) {
    if (m <= 1) return 3.0;
    const double alpha = 0.0026997960632601866;  // 2*(1 - Phi(3))
    const double alpha_each = 1.0 - std::pow(1.0 - alpha, 1.0 / static_cast<double>(m));
    return inverse_normal_cdf(1.0 - 0.5 * alpha_each);
}

struct LineFit {
    double slope = quiet_nan;
    double intercept = quiet_nan;
    double slope_stderr = quiet_nan;
};

/// Ordinary least squares y = intercept + slope * x.
inline LineFit fit_line(const std::vector<double>& xs, const std::vector<double>& ys) {
    const std::size_t n = xs.size();
    if (n != ys.size() || n < 2) throw std::invalid_argument("fit_line: need >= 2 points");
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
    }
    if (sxx == 0) throw std::invalid_argument("fit_line: degenerate abscissae");
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (n > 2) {
        double rss = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = ys[i] - (f.intercept + f.slope * xs[i]);
            rss += r * r;
        }
        f.slope_stderr = std::sqrt(rss / (n - 2) / sxx);
    }
    return f;
}

/// Two-sample Kolmogorov-Smirnov statistic sup |F1 - F2| (inputs get sorted).
inline double ks_statistic(std::vector<double> x, std::vector<double> y) {
    std::sort(x.begin(), x.end());
    std::sort(y.begin(), y.end());
    const std::size_t n = x.size(), m = y.size();
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n && j < m) {
        if (x[i] <= y[j])
            ++i;
        else
            ++j;
        d = std::max(d, std::abs(double(i) / n - double(j) / m));
    }
    return d;
}

/// Critical value of the two-sample KS test at level alpha.
inline double ks_critical(std::size_t n, std::size_t m, double alpha) {
    const double c = std::sqrt(-0.5 * std::log(alpha / 2.0));
    return c * std::sqrt(double(n + m) / (double(n) * double(m)));
}

}  // namespace bbmgibbs
