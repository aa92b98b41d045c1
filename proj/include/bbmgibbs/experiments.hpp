#pragma once

#include <bbmgibbs/config.hpp>
#include <bbmgibbs/stats.hpp>

#include <cinttypes>
#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace bbmgibbs {

struct ExperimentResult {
    StatReport report;
    json metadata;
    std::vector<std::string> csv_lines;  // results.csv, header first
    std::vector<std::pair<std::string, std::string>> extra_files;  // relative path -> content
    int exit_code = 0;  // 0 pass, 1 failed verdict
};

namespace detail {

inline std::string fmt17(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline Potential load_potential(const ExperimentConfig& cfg) {
    if (!cfg.v_file.empty()) {
        std::ifstream in(cfg.v_file);
        if (!in) throw ConfigError("cannot open potential sample file " + cfg.v_file);
        std::vector<double> vals;
        double v;
        while (in >> v) vals.push_back(v);
        if (vals.size() < 16) throw ConfigError("potential sample file too short");
        return Potential::from_samples(
            Eigen::Map<Eigen::VectorXd>(vals.data(), vals.size()), cfg.v_file);
    }
    if (cfg.v_expression.empty()) return Potential::zero();
    return Potential::from_expression(cfg.v_expression);
}

inline GaussianSpec resolve_measure(const ExperimentConfig& cfg) {
    const Potential V = load_potential(cfg);
    if (V.is_zero()) return GaussianSpec::diagonal(cfg.N, cfg.tail_order);
    return GaussianSpec::perturbed(V, cfg.N, cfg.tail_order);
}

inline FlowKind parse_flow_kind(const std::string& s) {
    if (s == "linear") return FlowKind::linear;
    if (s == "galerkin-bbm") return FlowKind::galerkin_bbm;
    if (s == "perturbed") return FlowKind::perturbed;
    if (s == "composite-bbm") return FlowKind::composite_bbm;
    if (s == "composite-perturbed") return FlowKind::composite_perturbed;
    throw ConfigError("unknown flow kind '" + s + "'");
}

inline Integrator parse_integrator(const std::string& s) {
    if (s == "implicit-midpoint") return Integrator::implicit_midpoint;
    if (s == "rk4-oracle") return Integrator::rk4_oracle;
    if (s == "picard-duhamel") return Integrator::picard_duhamel;
    throw ConfigError("unknown integrator '" + s + "'");
}

inline FlowSpec resolve_flow(const ExperimentConfig& cfg) {
    FlowSpec f;
    f.kind = parse_flow_kind(cfg.flow_kind);
    f.N = cfg.N;
    f.N_tail = is_composite(f.kind) ? cfg.tail_order : 0;
    f.integrator = parse_integrator(cfg.integrator);
    f.dt = cfg.dt;
    f.tol = cfg.tol;
    if (is_perturbed(f.kind)) f.V = load_potential(cfg);
    f.validate();
    return f;
}

inline bool matched_pair(const GaussianSpec& m, const FlowSpec& f) {
    if (m.kind == GaussianSpec::Kind::diagonal_mu) return !is_perturbed(f.kind);
    return is_perturbed(f.kind) && f.V && m.V &&
           f.V->fingerprint() == m.V->fingerprint();
}

inline std::pair<std::vector<SpectralField>, std::vector<std::string>> resolve_probes(
    const ExperimentConfig& cfg, int order) {
    std::vector<SpectralField> probes;
    std::vector<std::string> labels;
    for (const auto& e : cfg.probe_exprs) {
        probes.push_back(parse_probe(e, order));
        labels.push_back(e);
    }
    for (int k = 0; k < cfg.random_probes; ++k) {
        SeededRng rng(cfg.seed, stream_ns::probes + k);
        probes.push_back(sample_mu(order, rng));
        labels.push_back("random" + std::to_string(k));
    }
    return {probes, labels};
}

inline std::vector<std::string> report_csv(const StatReport& rep) {
    std::vector<std::string> lines;
    lines.push_back("estimator,label,t,value,imag,stderr,ref,z");
    for (const auto& e : rep.estimates) {
        std::string label = e.label;
        for (auto& ch : label)
            if (ch == ',') ch = ';';
        lines.push_back(rep.name + "," + label + "," + fmt17(e.time) + "," + fmt17(e.value) +
                        "," + fmt17(e.value_im) + "," + fmt17(e.std_error) + "," +
                        (std::isfinite(e.ref) ? fmt17(e.ref) : "") + "," +
                        (std::isfinite(e.z) ? fmt17(e.z) : ""));
    }
    return lines;
}

inline json base_metadata(const ExperimentConfig& cfg) {
    json meta;
    meta["tool"] = "bbmgibbs";
    meta["tool_version"] = tool_version;
    meta["resolved_config"] = cfg.resolved();
    meta["seed"] = cfg.seed;
    return meta;
}

inline Eigen::VectorXd theory_kz(const GaussianSpec& measure, int order) {
    const TrigOperator C = covariance(measure);
    Eigen::VectorXd kz = Eigen::VectorXd::Zero(order + 1);
    const int mo = measure.total_order();
    kz[0] = C.mat(0, 0);
    for (int n = 1; n <= std::min(order, mo); ++n)
        kz[n] = C.mat(n, n) + C.mat(mo + n, mo + n);
    return kz;
}

}  // namespace detail

// ---- experiment drivers -----------------------------------------------------

inline ExperimentResult experiment_sample(const ExperimentConfig& cfg) {
    ExperimentResult res;
    EnsembleSpec es;
    es.measure = detail::resolve_measure(cfg);
    es.flow.kind = FlowKind::linear;
    es.flow.N = es.measure.total_order();
    es.count = cfg.count;
    es.times = {0.0};
    es.base_seed = cfg.seed;

    StatsOptions so;
    so.threads = cfg.threads;
    const EnsembleStats stats = run_ensemble_stats(es, so);
    res.report.name = "sample";
    res.report.seed = cfg.seed;
    res.report.count = cfg.count;

    const Eigen::VectorXd ref = detail::theory_kz(es.measure, stats.order);
    const auto kz = stats.kz_spectrum(0);
    const double zcrit = familywise_z(kz.size());
    double worst = 0.0;
    for (int n = 0; n <= stats.order; ++n) {
        Estimate e = kz[n];
        e.ref = ref[n];
        e.z = e.std_error > 0 ? (e.value - ref[n]) / e.std_error : 0.0;
        worst = std::max(worst, std::abs(e.z));
        res.report.estimates.push_back(e);
    }
    res.report.verdicts.push_back({"sampler_calibration", worst <= zcrit, worst, zcrit,
                                   "empirical mode amplitudes vs the measure"});

    res.csv_lines = detail::report_csv(res.report);
    // raw fields for small ensembles
    if (cfg.count <= 10000) {
        EnsembleSpec raw = es;
        const Ensemble ens = run_ensemble(raw);
        std::string body = "member,n,a,b\n";
        for (std::size_t k = 0; k < ens.states[0].size(); ++k) {
            const auto& u = ens.states[0][k];
            for (int n = 0; n <= u.N; ++n)
                body += std::to_string(k) + "," + std::to_string(n) + "," +
                        detail::fmt17(u.an(n)) + "," + detail::fmt17(u.bn(n)) + "\n";
        }
        res.extra_files.emplace_back("fields.csv", body);
    }
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_evolve(const ExperimentConfig& cfg) {
    ExperimentResult res;
    const GaussianSpec measure = detail::resolve_measure(cfg);
    const FlowSpec flow = detail::resolve_flow(cfg);

    SpectralField u0(flow.total_order());
    if (!cfg.u0_expression.empty()) {
        u0 = parse_probe(cfg.u0_expression, flow.total_order());
    } else {
        SeededRng rng(cfg.seed, 0);
        u0 = project(sample(measure, rng), flow.total_order());
    }

    const Trajectory tr = evolve(flow, u0, cfg.times);
    res.report.name = "evolve";
    res.report.seed = cfg.seed;
    res.report.count = 1;

    for (const auto& [name, series] : tr.conserved)
        for (std::size_t i = 0; i < series.size(); ++i) {
            Estimate e;
            e.label = name;
            e.time = tr.times[i];
            e.value = series[i];
            res.report.estimates.push_back(e);
        }

    const std::string gated = is_perturbed(flow.kind) ? "energy_ev" : "h1_energy";
    const auto& series = tr.conserved.at(gated);
    double drift = 0.0;
    for (double v : series) drift = std::max(drift, std::abs(v - series[0]));
    drift /= std::abs(series[0]);
    res.report.verdicts.push_back({"conservation_" + gated, drift <= cfg.drift_tolerance, drift,
                                   cfg.drift_tolerance, "relative drift over the trajectory"});
    res.report.extra["iterations"] = tr.diagnostics.iterations;
    res.report.extra["steps"] = tr.diagnostics.steps;
    res.report.extra["max_solve_residual"] = tr.diagnostics.max_residual;

    if (cfg.write_trajectories) {
        std::string body = "t,n,a,b\n";
        for (std::size_t i = 0; i < tr.times.size(); ++i) {
            const auto& u = tr.states[i];
            for (int n = 0; n <= u.N; ++n)
                body += detail::fmt17(tr.times[i]) + "," + std::to_string(n) + "," +
                        detail::fmt17(u.an(n)) + "," + detail::fmt17(u.bn(n)) + "\n";
        }
        res.extra_files.emplace_back("trajectories/traj_000.csv", body);
    }

    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_invariance(const ExperimentConfig& cfg) {
    ExperimentResult res;
    EnsembleSpec es;
    es.measure = detail::resolve_measure(cfg);
    es.flow = detail::resolve_flow(cfg);
    if (!detail::matched_pair(es.measure, es.flow))
        throw ConfigError("invariance requires a matched measure/flow pair");
    es.count = cfg.count;
    es.times = cfg.times;
    std::tie(es.probes, es.probe_labels) = detail::resolve_probes(cfg, es.flow.total_order());
    es.base_seed = cfg.seed;

    InvarianceOptions opt;
    opt.stats.threads = cfg.threads;
    res.report = invariance_report(es, opt);
    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_spectrum(const ExperimentConfig& cfg) {
    ExperimentResult res;
    EnsembleSpec es;
    es.measure = detail::resolve_measure(cfg);
    es.flow = detail::resolve_flow(cfg);
    es.count = cfg.count;
    es.times = cfg.times;
    es.base_seed = cfg.seed;

    StatsOptions so;
    so.threads = cfg.threads;
    const EnsembleStats stats = run_ensemble_stats(es, so);

    res.report.name = "spectrum";
    res.report.seed = cfg.seed;
    res.report.count = cfg.count;
    const bool matched = detail::matched_pair(es.measure, es.flow);
    const std::size_t family = (stats.order + 1) * cfg.times.size();
    const double zcrit = familywise_z(family);

    const Eigen::VectorXd ref = detail::theory_kz(es.measure, stats.order);
    double worst0 = 0.0;
    for (std::size_t ti = 0; ti < cfg.times.size(); ++ti) {
        const auto kz = stats.kz_spectrum(ti);
        const auto zinv = ti > 0 ? stats.kz_invariance_z(ti) : std::vector<double>();
        for (int n = 0; n <= stats.order; ++n) {
            Estimate e = kz[n];
            e.ref = ref[n];
            if (ti == 0) {
                e.z = e.std_error > 0 ? (e.value - ref[n]) / e.std_error : 0.0;
                worst0 = std::max(worst0, std::abs(e.z));
            } else {
                e.z = zinv[n];
            }
            res.report.estimates.push_back(e);
        }
        if (ti > 0) {
            double worst = 0.0;
            for (double z : zinv) worst = std::max(worst, std::abs(z));
            if (matched)
                res.report.verdicts.push_back({"kz_invariance_t=" + std::to_string(cfg.times[ti]),
                                               worst <= zcrit, worst, zcrit,
                                               "paired against t=0"});
            else
                res.report.extra["kz_worst_z_t=" + std::to_string(cfg.times[ti])] = worst;
        }
    }
    res.report.verdicts.insert(res.report.verdicts.begin(),
                               {"kz_calibration_t0", worst0 <= zcrit, worst0, zcrit,
                                "empirical vs the measure spectrum"});
    res.report.extra["matched_pair"] = matched;

    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_stability(const ExperimentConfig& cfg) {
    ExperimentResult res;
    FlowSpec flow = detail::resolve_flow(cfg);
    if (is_perturbed(flow.kind))
        throw ConfigError("stability evolves under the unperturbed flow; use kind composite-bbm");
    if (cfg.eps_ladder.empty()) throw ConfigError("stability requires 'stats.eps_ladder'");

    StabilityOptions opt;
    opt.eps_ladder = cfg.eps_ladder;
    opt.v0_samples = detail::shape_samples(cfg.stability_v0);
    opt.times = cfg.times;
    opt.count = cfg.count;
    opt.seed = cfg.seed;
    opt.common_random_numbers = cfg.crn;
    opt.shards = cfg.shards;
    opt.stats.threads = cfg.threads;
    opt.slope_low = cfg.slope_low;
    opt.slope_high = cfg.slope_high;

    if (!cfg.probe_exprs.empty()) {
        std::tie(opt.probes, opt.probe_labels) = detail::resolve_probes(cfg, flow.total_order());
        opt.slope_probe_indices = cfg.gate_probes;
    } else {
        // gate probes chosen for estimator power; the scaled-c1 family is
        // reported for the monotonicity-in-lambda diagnostic
        for (const char* e : {"0.5*s1", "s1", "s1+s2", "0.5*c1", "c1", "2*c1"}) {
            opt.probes.push_back(parse_probe(e, flow.total_order()));
            opt.probe_labels.emplace_back(e);
        }
        opt.slope_probe_indices = {0, 1, 2};
    }

    res.report = stability_scan(flow, opt);

    // lambda-monotonicity diagnostic on the trailing scaled family (reported,
    // not gated: the estimator saturates for large multiples)
    if (opt.probe_labels.size() >= 6 && opt.probe_labels[4] == "c1") {
        const std::size_t np = opt.probes.size();
        const std::size_t last_eps = opt.eps_ladder.size() - 1;
        auto delta_of = [&](std::size_t p) {
            return res.report.estimates[last_eps * np * (opt.times.size() - 1) + p].value;
        };
        const double d1 = delta_of(3), d2 = delta_of(4), d3 = delta_of(5);
        const double se = res.report.estimates[last_eps * np * (opt.times.size() - 1) + 4].std_error;
        res.report.extra["lambda_monotone_c1_family"] =
            (d2 >= d1 - 3 * se) && (d3 >= d2 - 3 * se);
    }

    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_convergence(const ExperimentConfig& cfg) {
    ExperimentResult res;
    std::vector<int> orders = cfg.orders.empty() ? std::vector<int>{8, 16, 32} : cfg.orders;
    const int nref = cfg.n_ref_multiplier * *std::max_element(orders.begin(), orders.end());
    const double t = cfg.times.back();

    FlowSpec tmpl = detail::resolve_flow(cfg);
    res.report.name = "convergence";
    res.report.seed = cfg.seed;
    res.report.count = cfg.count;

    bool all_decreasing = true;
    std::vector<double> slopes;
    for (std::size_t k = 0; k < cfg.count; ++k) {
        SeededRng rng(cfg.seed, k);
        const SpectralField u0 = sample_mu(nref, rng);
        const ConvergenceReport rep = flow_convergence(u0, orders, t, tmpl, cfg.n_ref_multiplier);
        all_decreasing = all_decreasing && rep.strictly_decreasing;
        if (std::isfinite(rep.slope)) slopes.push_back(rep.slope);
        for (std::size_t i = 0; i < orders.size(); ++i) {
            Estimate e;
            e.label = "err[u0=" + std::to_string(k) + "][N=" + std::to_string(orders[i]) + "]";
            e.time = t;
            e.value = rep.errors[i];
            res.report.estimates.push_back(e);
        }
    }
    res.report.verdicts.push_back({"errors_strictly_decrease", all_decreasing,
                                   all_decreasing ? 1.0 : 0.0, 1.0,
                                   "per sample, along the order ladder"});
    if (!slopes.empty()) {
        double mean = 0;
        for (double s : slopes) mean += s;
        res.report.extra["mean_slope"] = mean / slopes.size();
    }
    res.report.extra["reference_order"] = nref;

    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult experiment_closeness(const ExperimentConfig& cfg) {
    ExperimentResult res;
    const Potential V = detail::load_potential(cfg);
    if (V.is_zero()) throw ConfigError("closeness requires a nonzero 'measure.V'");

    ClosenessOptions opt;
    opt.corpus = cfg.count;
    for (double t : cfg.times)
        if (t > 0) opt.times.push_back(t);
    if (opt.times.empty()) throw ConfigError("closeness requires a positive comparison time");
    opt.seed = cfg.seed;
    opt.dt = cfg.dt;
    opt.threads = cfg.threads;
    opt.ratio_tolerance = cfg.ratio_tolerance;

    res.report = flow_closeness(V, cfg.N, opt);
    res.csv_lines = detail::report_csv(res.report);
    res.metadata = detail::base_metadata(cfg);
    res.exit_code = res.report.all_pass() ? 0 : 1;
    return res;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    if (cfg.experiment == "sample") return experiment_sample(cfg);
    if (cfg.experiment == "evolve") return experiment_evolve(cfg);
    if (cfg.experiment == "invariance") return experiment_invariance(cfg);
    if (cfg.experiment == "spectrum") return experiment_spectrum(cfg);
    if (cfg.experiment == "stability") return experiment_stability(cfg);
    if (cfg.experiment == "convergence") return experiment_convergence(cfg);
    if (cfg.experiment == "closeness") return experiment_closeness(cfg);
    throw ConfigError("unknown experiment kind '" + cfg.experiment + "'");
}

/// Resolved-plan text: materialized defaults, workload estimate, and the
/// gates that a run would evaluate. No computation is performed.
inline std::string describe(const ExperimentConfig& cfg) {
    std::ostringstream out;
    out << "experiment: " << cfg.experiment << "\n";
    out << "seed: " << cfg.seed << "\n";
    out << "measure: " << (cfg.v_expression.empty() && cfg.v_file.empty() ? "mu (diagonal)"
                                                                          : "mu_V")
        << ", N = " << cfg.N;
    if (!cfg.v_expression.empty()) out << ", V = " << cfg.v_expression;
    if (!cfg.v_file.empty()) out << ", V from file " << cfg.v_file;
    if (cfg.tail_order > 0) out << ", diagonal tail through order " << cfg.N + cfg.tail_order;
    out << "\n";
    out << "flow: " << cfg.flow_kind << ", " << cfg.integrator << ", dt = " << cfg.dt
        << ", tol = " << cfg.tol << "\n";

    double tmax = 0.0;
    for (double t : cfg.times) tmax = std::max(tmax, std::abs(t));
    const double steps_per_member = tmax / cfg.dt;

    if (cfg.experiment == "stability") {
        out << "eps ladder: {";
        for (std::size_t i = 0; i < cfg.eps_ladder.size(); ++i)
            out << (i ? ", " : "") << cfg.eps_ladder[i];
        out << "} scaling V0 = " << cfg.stability_v0 << "\n";
        out << "coupling: " << (cfg.crn ? "common random numbers across the ladder"
                                        : "independent streams per rung")
            << "\n";
        out << "workload: ~" << cfg.eps_ladder.size() << " x " << cfg.count << " members x "
            << steps_per_member << " steps\n";
        out << "gates: eps_scaling_slope in [" << cfg.slope_low << ", " << cfg.slope_high
            << "]\n";
    } else if (cfg.experiment == "convergence") {
        std::vector<int> orders = cfg.orders.empty() ? std::vector<int>{8, 16, 32} : cfg.orders;
        const int nref = cfg.n_ref_multiplier * *std::max_element(orders.begin(), orders.end());
        out << "orders: {";
        for (std::size_t i = 0; i < orders.size(); ++i) out << (i ? ", " : "") << orders[i];
        out << "}, reference order (multiplier " << cfg.n_ref_multiplier << "): " << nref << "\n";
        out << "workload: ~" << cfg.count << " samples x " << orders.size() + 1 << " flows x "
            << steps_per_member << " steps\n";
        out << "gates: errors_strictly_decrease\n";
    } else if (cfg.experiment == "evolve") {
        out << "initial datum: "
            << (cfg.u0_expression.empty() ? "sampled from the measure (stream 0)"
                                          : cfg.u0_expression)
            << "\n";
        out << "monitored: h1_energy, hamiltonian"
            << (cfg.flow_kind.find("perturbed") != std::string::npos ? ", energy_ev" : "")
            << "\n";
        out << "workload: ~" << steps_per_member << " steps\n";
        out << "gates: conservation drift <= " << cfg.drift_tolerance << "\n";
    } else if (cfg.experiment == "closeness") {
        out << "workload: ~2 potentials x 2 flows x " << cfg.count << " members x "
            << steps_per_member << " steps\n";
        out << "gates: halving_ratio within " << cfg.ratio_tolerance << " of 2\n";
    } else if (cfg.experiment == "sample") {
        out << "workload: " << cfg.count << " draws\n";
        out << "gates: sampler_calibration (family-wise 3-sigma)\n";
    } else {
        out << "times: {";
        for (std::size_t i = 0; i < cfg.times.size(); ++i) out << (i ? ", " : "") << cfg.times[i];
        out << "}\n";
        out << "workload: ~" << cfg.count << " members x " << steps_per_member << " steps\n";
        out << "gates: " << (cfg.experiment == "invariance"
                                 ? "calibration_t0 + paired kz/moment invariance"
                                 : "kz_calibration_t0 (+ paired kz when matched)")
            << " at the family-wise 3-sigma threshold\n";
    }
    if (!cfg.defaults_applied.empty()) {
        out << "defaults applied:";
        for (const auto& d : cfg.defaults_applied) out << " " << d;
        out << "\n";
    }
    return out.str();
}

}  // namespace bbmgibbs
