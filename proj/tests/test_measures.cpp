#include <bbmgibbs/measures.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

#include <Eigen/Cholesky>

using namespace bbmgibbs;
using Catch::Approx;

TEST_CASE("B at V = 0 is the diagonal H^{-1}", "[measures]") {
    const int N = 6;
    const BBuild b = build_b(Potential::zero(), N);
    Eigen::VectorXd expect(2 * N + 1);
    expect[0] = 1.0;
    for (int n = 1; n <= N; ++n) expect[n] = expect[N + n] = 1.0 / std::sqrt(1.0 + n * n);
    CHECK((b.B.mat - Eigen::MatrixXd(expect.asDiagonal())).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b.band_tail_mass < 1e-14);
}

TEST_CASE("B entries match direct quadrature", "[measures]") {
    const Potential V = Potential::from_expression("0.1*cos(x)");
    const int N = 2;
    const TrigOperator B = build_b(V, N).B;
    const auto& s = V.samples();
    const int M = V.grid_size();
    auto basis = [&](int idx, double x) {
        if (idx == 0) return 1.0 / std::sqrt(two_pi);
        if (idx <= N) return std::cos(idx * x) / std::sqrt(M_PI);
        return std::sin((idx - N) * x) / std::sqrt(M_PI);
    };
    auto hweight = [&](int idx) {
        const int n = idx <= N ? idx : idx - N;
        return 1.0 / std::sqrt(1.0 + double(n) * n);
    };
    for (int r = 0; r < B.dim(); ++r) {
        for (int c = 0; c < B.dim(); ++c) {
            double acc = 0.0;
            for (int j = 0; j < M; ++j) {
                const double x = two_pi * j / M;
                acc += Potential::inv_sqrt1p(s[j]) * basis(r, x) * basis(c, x);
            }
            acc *= two_pi / M * hweight(c);
            CHECK(B.mat(r, c) == Approx(acc).margin(1e-8));
        }
    }
    // even V: no cosine-sine coupling
    for (int n = 0; n <= N; ++n)
        for (int m = 1; m <= N; ++m) CHECK(std::abs(B.mat(n, N + m)) < 1e-12);
}

TEST_CASE("sample_mu second moments", "[measures]") {
    const int N = 4;
    const std::size_t count = 100000;
    double sum_a1_sq = 0, sum_a1a2 = 0, sum_sq_a1_sq = 0;
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng rng(2718, k);
        const SpectralField u = sample_mu(N, rng);
        sum_a1_sq += u.a[1] * u.a[1];
        sum_sq_a1_sq += u.a[1] * u.a[1] * u.a[1] * u.a[1];
        sum_a1a2 += u.a[1] * u.a[2];
    }
    const double mean = sum_a1_sq / count;
    const double se = std::sqrt((sum_sq_a1_sq / count - mean * mean) / count);
    CHECK(std::abs(mean - 0.5) < 3.0 * se);  // E a_1^2 = 1/(1+1)

    const double cross_se = std::sqrt(0.5 * 0.2 / count);  // ~ sqrt(var a1 var a2 / n)
    CHECK(std::abs(sum_a1a2 / count) < 3.0 * cross_se);
}

TEST_CASE("mode amplitudes E[a_n^2 + b_n^2] = 2/(1+n^2)", "[measures]") {
    const int N = 8;
    const std::size_t count = 50000;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(N + 1), sumsq = Eigen::VectorXd::Zero(N + 1);
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng rng(31415, k);
        const SpectralField u = sample_mu(N, rng);
        for (int n = 0; n <= N; ++n) {
            const double amp = u.a[n] * u.a[n] + (n >= 1 ? u.b[n - 1] * u.b[n - 1] : 0.0);
            sum[n] += amp;
            sumsq[n] += amp * amp;
        }
    }
    const double zcrit = familywise_z(N + 1);
    for (int n = 0; n <= N; ++n) {
        const double mean = sum[n] / count;
        const double se = std::sqrt((sumsq[n] / count - mean * mean) / count);
        const double ref = (n == 0 ? 1.0 : 2.0) / (1.0 + double(n) * n);
        CHECK(std::abs(mean - ref) < zcrit * se);
    }
}

TEST_CASE("sample_mu_v with V = 0 reproduces sample_mu bit for bit", "[measures]") {
    const int N = 5;
    const GaussianSpec spec = GaussianSpec::perturbed(Potential::zero(), N);
    SeededRng r1(99, 3), r2(99, 3);
    const SpectralField u = sample_mu_v(spec, r1);
    const SpectralField v = sample_mu(N, r2);
    CHECK((u.packed() - v.packed()).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("two-sample KS between mu and mu_{V=0} marginals", "[measures]") {
    const int N = 3;
    const std::size_t count = 100000;
    const GaussianSpec spec = GaussianSpec::perturbed(Potential::zero(), N);
    std::vector<double> x(count), y(count);
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng r1(1000, k), r2(2000, k);
        x[k] = sample_mu(N, r1).a[1];
        y[k] = sample_mu_v(spec, r2).a[1];
    }
    CHECK(ks_statistic(x, y) < ks_critical(count, count, 0.01));
}

TEST_CASE("empirical covariance matches B B^T", "[measures]") {
    const int N = 8;
    const std::size_t count = 20000;
    const Potential V = Potential::from_expression("0.1*cos(x)");
    const GaussianSpec spec = GaussianSpec::perturbed(V, N);
    const Eigen::MatrixXd C = covariance(spec).mat;
    const int d = 2 * N + 1;

    Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(d, d), sumsq = Eigen::MatrixXd::Zero(d, d);
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng rng(5000, k);
        const Eigen::VectorXd y = sample_mu_v(spec, rng).packed();
        const Eigen::MatrixXd outer = y * y.transpose();
        sum += outer;
        sumsq += outer.cwiseProduct(outer);
    }
    const double zcrit = familywise_z(std::size_t(d) * (d + 1) / 2);
    int exceed3 = 0;
    for (int r = 0; r < d; ++r) {
        for (int c = r; c < d; ++c) {
            const double mean = sum(r, c) / count;
            const double se =
                std::sqrt(std::max(sumsq(r, c) / count - mean * mean, 0.0) / count);
            const double z = (mean - C(r, c)) / (se > 0 ? se : 1.0);
            CHECK(std::abs(z) < zcrit);
            exceed3 += std::abs(z) > 3.0;
        }
    }
    // a handful of 3-sigma excursions over ~560 entries is expected noise
    CHECK(exceed3 < 12);
}

TEST_CASE("cross-covariance scales linearly in the perturbation", "[measures]") {
    const int N = 8;
    auto offdiag = [&](double eps) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%g*cos(x)", eps);
        const GaussianSpec s = GaussianSpec::perturbed(Potential::from_expression(buf), N);
        return covariance(s).mat(1, 2);  // E[alpha_1 alpha_2]
    };
    const double c1 = offdiag(0.1), c2 = offdiag(0.05);
    CHECK(c1 != 0.0);
    CHECK(c1 / c2 == Approx(2.0).epsilon(0.06));
}

TEST_CASE("covariance is symmetric positive definite with bounded trace", "[measures]") {
    for (const char* expr : {"0.1*cos(x)", "0.12*sin(x)", "0.03*cos(3*x) - 0.01"}) {
        const Potential V = Potential::from_expression(expr);
        const int N = 12;
        const TrigOperator C = covariance(GaussianSpec::perturbed(V, N));
        CHECK(C.symmetry_defect() < 1e-12);
        Eigen::LLT<Eigen::MatrixXd> llt(C.mat);
        CHECK(llt.info() == Eigen::Success);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(C.mat);
        CHECK(es.eigenvalues().minCoeff() > 0.0);

        double bound = 0.0;
        for (int n = 0; n <= N; ++n) bound += 4.0 / (1.0 + double(n) * n);
        CHECK(C.mat.trace() <= bound);
    }
}

TEST_CASE("closed-form characteristic functional", "[measures]") {
    const int N = 6;
    const GaussianSpec mu = GaussianSpec::diagonal(N);
    CHECK(char_fn_closed(mu, SpectralField::zero(N)).real() == 1.0);

    const SpectralField c1 = SpectralField::cosine(1);
    CHECK(char_fn_closed(mu, c1).real() == Approx(std::exp(-0.25)).epsilon(1e-12));

    // Monte Carlo arbitration between the two H^{-1} conventions
    const std::size_t count = 200000;
    std::complex<double> acc = 0;
    for (std::size_t k = 0; k < count; ++k) {
        SeededRng rng(777, k);
        const SpectralField u = sample_mu(N, rng);
        acc += std::exp(std::complex<double>(0.0, inner(c1, u)));
    }
    const double mc = acc.real() / count;
    const double se = 1.0 / std::sqrt(double(count));
    const double z_orth = std::exp(-0.5 * std::pow(h_minus1_seminorm(c1), 2));
    const double z_paper =
        std::exp(-0.5 * std::pow(h_minus1_seminorm(c1, HMinus1Convention::paper_literal), 2));
    CHECK(std::abs(mc - z_orth) < 3.0 * se);   // e^{-1/4}
    CHECK(std::abs(mc - z_paper) > 30.0 * se); // e^{-1/(8 pi)} is firmly rejected

    // perturbed measure against its closed form
    const Potential V = Potential::from_expression("0.1*cos(x)");
    const GaussianSpec muv = GaussianSpec::perturbed(V, N);
    std::complex<double> accv = 0;
    for (std::size_t k = 0; k < count / 4; ++k) {
        SeededRng rng(778, k);
        accv += std::exp(std::complex<double>(0.0, inner(c1, sample_mu_v(muv, rng))));
    }
    const double mcv = accv.real() / (count / 4);
    CHECK(std::abs(mcv - char_fn_closed(muv, c1).real()) < 3.0 / std::sqrt(count / 4.0));
}

TEST_CASE("product measure with diagonal tail", "[measures]") {
    const Potential V = Potential::from_expression("0.1*cos(x)");
    const GaussianSpec spec = GaussianSpec::perturbed(V, 4, 4);
    CHECK(spec.total_order() == 8);
    SeededRng rng(12, 0);
    const SpectralField u = sample_mu_v(spec, rng);
    CHECK(u.N == 8);

    const TrigOperator C = covariance(spec);
    CHECK(C.N == 8);
    // tail block is diagonal with the mu variances
    for (int n = 5; n <= 8; ++n) {
        CHECK(C.mat(n, n) == Approx(1.0 / (1 + n * n)));
        CHECK(C.mat(8 + n, 8 + n) == Approx(1.0 / (1 + n * n)));
        CHECK(std::abs(C.mat(n, 1)) == 0.0);
    }
}

TEST_CASE("tail diagnostic decays", "[measures]") {
    const GaussianSpec spec = GaussianSpec::diagonal(32);
    const std::size_t samples = 20000;
    const auto radii =
        quantile_radii(spec, 0.25, samples, 4242, {0.5, 0.25, 0.1, 0.05, 0.02, 0.01});
    const StatReport rep = tail_diagnostic(spec, 0.25, radii, samples, 4242);
    CHECK(rep.all_pass());
    CHECK(rep.extra["slope_logP_vs_R2"].get<double>() < 0.0);
    CHECK_THROWS_AS(tail_diagnostic(spec, 0.6, radii, 10, 1), std::invalid_argument);
}

TEST_CASE("high-mode tails steepen with the cut", "[measures]") {
    const Potential V = Potential::from_expression("0.1*cos(x)");
    const GaussianSpec spec = GaussianSpec::perturbed(V, 32);
    const std::size_t samples = 30000;

    std::vector<double> slopes;
    for (int n0 : {2, 4, 8}) {
        std::vector<double> norms(samples);
        for (std::size_t k = 0; k < samples; ++k) {
            SeededRng rng(999, k);
            const SpectralField u = sample_mu_v(spec, rng);
            const Eigen::VectorXd tail = u.packed() - project(project(u, n0), u.N).packed();
            norms[k] = tail.norm();
        }
        std::sort(norms.begin(), norms.end());
        std::vector<double> xs, ys;
        for (double p : {0.5, 0.2, 0.05, 0.01}) {
            const double R = norms[static_cast<std::size_t>((1.0 - p) * (samples - 1))];
            xs.push_back(R * R);
            ys.push_back(std::log(p));
        }
        slopes.push_back(fit_line(xs, ys).slope);
    }
    CHECK(slopes[0] < 0.0);
    CHECK(slopes[1] < slopes[0]);  // steeper (more negative) as the cut grows
    CHECK(slopes[2] < slopes[1]);
}
