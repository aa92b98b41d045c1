#include <bbmgibbs/stats.hpp>

#include <catch2/catch_amalgamated.hpp>

#include "oracles.hpp"

using namespace bbmgibbs;
using Catch::Approx;

namespace {

EnsembleSpec small_spec(FlowKind kind, int N, std::size_t count, std::vector<double> times,
                        std::optional<Potential> V = std::nullopt, double dt = 2e-3) {
    EnsembleSpec es;
    es.measure = GaussianSpec::diagonal(N);
    es.flow.kind = kind;
    es.flow.N = N;
    es.flow.V = std::move(V);
    es.flow.dt = dt;
    es.count = count;
    es.times = std::move(times);
    es.base_seed = 90210;
    return es;
}

}  // namespace

TEST_CASE("run_ensemble returns the sampled fields at t = 0", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 6, 2, {0.0});
    const Ensemble e = run_ensemble(es);
    REQUIRE(e.states.size() == 1);
    REQUIRE(e.states[0].size() == 2);
    for (std::size_t k = 0; k < 2; ++k) {
        SeededRng rng(es.base_seed, k);
        const SpectralField ref = sample_mu(6, rng);
        CHECK((e.states[0][k].packed() - ref.packed()).norm() == 0.0);
    }

    // identical specs give bit-identical ensembles
    const Ensemble e2 = run_ensemble(es);
    for (std::size_t k = 0; k < 2; ++k)
        CHECK((e.states[0][k].packed() - e2.states[0][k].packed()).norm() == 0.0);
}

TEST_CASE("linear flow preserves per-member amplitudes exactly", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 8, 10, {0.0, 1.3});
    const Ensemble e = run_ensemble(es);
    for (std::size_t k = 0; k < es.count; ++k) {
        const auto& u0 = e.states[0][k];
        const auto& u1 = e.states[1][k];
        for (int n = 0; n <= 8; ++n) {
            const double amp0 = u0.an(n) * u0.an(n) + u0.bn(n) * u0.bn(n);
            const double amp1 = u1.an(n) * u1.an(n) + u1.bn(n) * u1.bn(n);
            CHECK(amp1 == Approx(amp0).margin(1e-14));
        }
    }
}

TEST_CASE("streaming stats are independent of the thread count", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::galerkin_bbm, 6, 600, {0.0, 0.1});
    StatsOptions one;
    one.moments = true;
    one.threads = 1;
    StatsOptions two = one;
    two.threads = 2;
    const EnsembleStats a = run_ensemble_stats(es, one);
    const EnsembleStats b = run_ensemble_stats(es, two);
    CHECK((a.sums.kz1[1] - b.sums.kz1[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.sums.m1[1] - b.sums.m1[1]).cwiseAbs().maxCoeff() == 0.0);
    CHECK((a.sums.m2[0] - b.sums.m2[0]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("char estimator basics", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 6, 5000, {0.0});
    es.probes = {SpectralField::zero(6), SpectralField::cosine(1)};
    const EnsembleStats s = run_ensemble_stats(es);

    const CharEstimate at_zero = estimate_char_fn(s, 0, 0);
    CHECK(at_zero.value.real() == 1.0);
    CHECK(at_zero.value.imag() == 0.0);
    CHECK(at_zero.std_error == 0.0);

    const CharEstimate z = estimate_char_fn(s, 0, 1);
    const double ref = char_fn_closed(GaussianSpec::diagonal(6), SpectralField::cosine(1)).real();
    CHECK(std::abs(z.value.real() - ref) < 3.0 * z.std_error);
    CHECK(std::abs(z.value.imag()) < 3.0 * z.std_error);
}

TEST_CASE("t0 char estimates match the closed form for mu_V", "[stats]") {
    const Potential V = Potential::from_expression("0.1*cos(x)");
    EnsembleSpec es = small_spec(FlowKind::linear, 8, 20000, {0.0});
    es.measure = GaussianSpec::perturbed(V, 8);
    SeededRng prng(1, stream_ns::probes);
    for (int j = 0; j < 10; ++j) es.probes.push_back(oracle::random_mu_field(8, prng));
    const EnsembleStats s = run_ensemble_stats(es);
    const double zcrit = familywise_z(10);
    for (std::size_t p = 0; p < es.probes.size(); ++p) {
        const CharEstimate z = estimate_char_fn(s, 0, p);
        const double ref = char_fn_closed(es.measure, es.probes[p]).real();
        CHECK(std::abs(z.value.real() - ref) <= zcrit * std::max(z.std_error, 1e-12));
    }
}

TEST_CASE("kz estimator matches the measure at t = 0", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 8, 30000, {0.0});
    const EnsembleStats s = run_ensemble_stats(es);
    const auto kz = kz_spectrum(s, 0);
    const double zcrit = familywise_z(kz.size());
    for (int n = 0; n <= 8; ++n) {
        const double ref = (n == 0 ? 1.0 : 2.0) / (1.0 + double(n) * n);
        CHECK(std::abs(kz[n].value - ref) <= zcrit * kz[n].std_error);
    }
}

TEST_CASE("matched invariance verdicts pass at unit scale", "[stats]") {
    // (mu, galerkin) pair
    EnsembleSpec es = small_spec(FlowKind::galerkin_bbm, 8, 3000, {0.0, 0.25});
    StatReport rep = invariance_report(es);
    INFO(rep.to_json().dump(1));
    CHECK(rep.all_pass());

    // (mu_V, perturbed) pair
    const Potential V = Potential::from_expression("0.1*cos(x)");
    EnsembleSpec esv = small_spec(FlowKind::perturbed, 8, 3000, {0.0, 0.25}, V);
    esv.measure = GaussianSpec::perturbed(V, 8);
    StatReport repv = invariance_report(esv);
    INFO(repv.to_json().dump(1));
    CHECK(repv.all_pass());
}

TEST_CASE("second moment extraction is consistent", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 5, 4000, {0.0});
    StatsOptions opt;
    opt.moments = true;
    const EnsembleStats s = run_ensemble_stats(es, opt);
    const auto [mean, se] = second_moments(s, 0);
    // diagonal close to the measure variances, off-diagonal close to zero
    for (int n = 0; n <= 5; ++n)
        CHECK(std::abs(mean(n, n) - 1.0 / (1 + n * n)) < 5.0 * se(n, n));
    CHECK(std::abs(mean(1, 2)) < 5.0 * se(1, 2));

    // kz is the trace pairing of the moments
    const auto kz = kz_spectrum(s, 0);
    for (int n = 1; n <= 5; ++n)
        CHECK(kz[n].value == Approx(mean(n, n) + mean(5 + n, 5 + n)).epsilon(1e-12));
}

TEST_CASE("stability scan: eps scaling at unit scale", "[stats][heavy]") {
    StabilityOptions opt;
    opt.eps_ladder = {0.15, 0.075};
    opt.v0_samples = Potential::from_expression("1/8*cos(x)").samples() * 8.0;  // cos(x)
    opt.probes = {SpectralField::cosine(1)};
    opt.probe_labels = {"c1"};
    opt.times = {0.0, 0.5};
    opt.count = 15000;
    opt.seed = 5150;
    opt.shards = 8;
    opt.slope_low = 0.5;
    opt.slope_high = 1.5;

    FlowSpec flow;
    flow.kind = FlowKind::composite_bbm;
    flow.N = 8;
    flow.dt = 2e-3;

    const StatReport rep = stability_scan(flow, opt);
    INFO(rep.to_json().dump(1));
    CHECK(rep.all_pass());
    const double delta_large = rep.estimates[0].value;
    const double delta_small = rep.estimates[1].value;
    CHECK(delta_large > delta_small);  // larger eps moves the functional more
}

TEST_CASE("common random numbers reduce the slope variance", "[stats][heavy]") {
    StabilityOptions opt;
    opt.eps_ladder = {0.15, 0.075};
    opt.v0_samples = Potential::from_expression("0.1*cos(x)").samples() * 10.0;
    opt.probes = {SpectralField::cosine(1)};
    opt.times = {0.0, 0.5};
    opt.count = 8000;
    opt.seed = 616;
    opt.shards = 8;
    opt.slope_low = -10, opt.slope_high = 10;  // not under test here

    FlowSpec flow;
    flow.kind = FlowKind::composite_bbm;
    flow.N = 8;
    flow.dt = 2e-3;

    StabilityOptions indep = opt;
    indep.common_random_numbers = false;
    const StatReport crn = stability_scan(flow, opt);
    const StatReport no_crn = stability_scan(flow, indep);

    // the two estimates agree within errors
    for (std::size_t i = 0; i < crn.estimates.size(); ++i) {
        const double d = std::abs(crn.estimates[i].value - no_crn.estimates[i].value);
        CHECK(d <= 3.0 * (crn.estimates[i].std_error + no_crn.estimates[i].std_error));
    }
    // and the coupled ladder has the steadier slope
    const double var_crn = crn.extra["shard_slope_variance"].get<double>();
    const double var_ind = no_crn.extra["shard_slope_variance"].get<double>();
    INFO("crn " << var_crn << " vs independent " << var_ind);
    CHECK(var_crn < var_ind);
}

TEST_CASE("flow closeness: zero potential and halving", "[stats][heavy]") {
    ClosenessOptions opt;
    opt.corpus = 40;
    opt.times = {0.5};
    opt.seed = 1999;
    opt.dt = 2e-3;

    // V = 0: the two flows coincide
    const StatReport zero = flow_closeness(Potential::zero(), 8, opt);
    CHECK(zero.estimates[0].value < 1e-12);

    const Potential V = Potential::from_expression("0.1*cos(x)");
    const StatReport rep = flow_closeness(V, 8, opt);
    INFO(rep.to_json().dump(1));
    CHECK(rep.verdicts[0].pass);
    CHECK(rep.estimates[0].value > 0.0);
}

TEST_CASE("ensemble validation", "[stats]") {
    EnsembleSpec es = small_spec(FlowKind::linear, 4, 1, {0.0});
    CHECK_THROWS_AS(es.validate(), std::invalid_argument);  // count < 2
    es.count = 4;
    es.times = {0.5};
    CHECK_THROWS_AS(es.validate(), std::invalid_argument);  // times must start at 0
    es.times = {0.0};
    es.measure = GaussianSpec::diagonal(10);
    CHECK_THROWS_AS(es.validate(), std::invalid_argument);  // measure order too high
}
