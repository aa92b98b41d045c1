#pragma once

#include <bbmgibbs/potential.hpp>
#include <bbmgibbs/reports.hpp>
#include <bbmgibbs/spectral.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace bbmgibbs {

inline constexpr const char* tool_version = "0.1.0";

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

inline void reject_unknown_keys(const json& obj, const std::set<std::string>& allowed,
                                const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it)
        if (!allowed.count(it.key()))
            throw ConfigError("unknown key '" + it.key() + "' in " + where);
}

/// Synthesizes a trig-sum expression on the uniform grid without the
/// admissibility certificate (used for potential *shapes* that are scaled
/// later).
inline Eigen::VectorXd shape_samples(const std::string& expr, int M = Potential::default_grid) {
    const auto terms = parse_trig_sum(expr);
    Eigen::VectorXd samples = Eigen::VectorXd::Zero(M);
    for (int j = 0; j < M; ++j) {
        const double x = GridFunction::node(j, M);
        double v = 0.0;
        for (const auto& t : terms)
            v += t.wavenumber == 0
                     ? t.coef
                     : t.coef * (t.is_sin ? std::sin(t.wavenumber * x) : std::cos(t.wavenumber * x));
        samples[j] = v;
    }
    return samples;
}

}  // namespace detail

/// Probe grammar: sums of scaled basis functions, e.g. "c1", "0.5*s1",
/// "c1 + 2*s3".
inline SpectralField parse_probe(const std::string& text, int order) {
    SpectralField u(order);
    std::size_t i = 0;
    const auto skip = [&] { while (i < text.size() && std::isspace((unsigned char)text[i])) ++i; };
    bool first = true;
    skip();
    if (i == text.size()) throw ConfigError("empty probe expression");
    while (i < text.size()) {
        double sign = 1.0;
        skip();
        if (text[i] == '+' || text[i] == '-') {
            sign = text[i] == '-' ? -1.0 : 1.0;
            ++i;
            skip();
        } else if (!first) {
            throw ConfigError("probe '" + text + "': expected '+' or '-'");
        }
        first = false;
        double coef = 1.0;
        if (i < text.size() && (std::isdigit((unsigned char)text[i]) || text[i] == '.')) {
            std::size_t end = i;
            while (end < text.size() &&
                   (std::isdigit((unsigned char)text[end]) || text[end] == '.'))
                ++end;
            coef = std::stod(text.substr(i, end - i));
            i = end;
            skip();
            if (i < text.size() && text[i] == '*') {
                ++i;
                skip();
            }
            if (i < text.size() && text[i] == '/') {
                ++i;
                skip();
                std::size_t dend = i;
                while (dend < text.size() && std::isdigit((unsigned char)text[dend])) ++dend;
                coef /= std::stod(text.substr(i, dend - i));
                i = dend;
                skip();
            }
        }
        if (i >= text.size() || (text[i] != 'c' && text[i] != 's'))
            throw ConfigError("probe '" + text + "': expected c<n> or s<n>");
        const bool is_sin = text[i] == 's';
        ++i;
        std::size_t end = i;
        while (end < text.size() && std::isdigit((unsigned char)text[end])) ++end;
        if (end == i) throw ConfigError("probe '" + text + "': missing mode number");
        const int n = std::stoi(text.substr(i, end - i));
        i = end;
        if (n > order) throw ConfigError("probe '" + text + "': mode exceeds the field order");
        if (is_sin) {
            if (n < 1) throw ConfigError("probe '" + text + "': s0 does not exist");
            u.b[n - 1] += sign * coef;
        } else {
            u.a[n] += sign * coef;
        }
        skip();
    }
    return u;
}

/// Fully-resolved experiment description. Unknown keys are rejected; every
/// defaulted field is recorded so the output metadata is self-describing.
struct ExperimentConfig {
    std::string experiment;
    std::uint64_t seed = 0;
    int threads = 0;
    std::string output_dir = "out";

    // measure
    int N = 16;
    std::string v_expression;  // empty = V = 0
    std::string v_file;
    int tail_order = 0;

    // flow
    std::string flow_kind = "composite-bbm";
    std::string integrator = "implicit-midpoint";
    double dt = 1e-3;
    double tol = 1e-12;
    int n_ref_multiplier = 4;
    std::string u0_expression;  // evolve: explicit initial datum (probe grammar)

    // statistics
    std::size_t count = 10000;
    std::vector<double> times{0.0, 1.0};
    std::vector<std::string> probe_exprs;
    int random_probes = 0;
    std::vector<double> eps_ladder;
    std::string stability_v0 = "cos(x)";
    std::vector<std::size_t> gate_probes;
    std::vector<int> orders;
    double tail_s = 0.25;
    std::size_t shards = 16;
    bool crn = true;
    double slope_low = 0.7, slope_high = 1.3;
    double ratio_tolerance = 0.2;
    double drift_tolerance = 1e-8;
    bool write_trajectories = false;

    std::vector<std::string> defaults_applied;

    static const std::set<std::string>& known_experiments() {
        static const std::set<std::string> kinds{"sample",    "evolve",      "invariance",
                                                 "spectrum",  "stability",   "convergence",
                                                 "closeness"};
        return kinds;
    }

    static ExperimentConfig parse(const json& j);
    static ExperimentConfig load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file " + path);
        json j;
        try {
            in >> j;
        } catch (const json::exception& e) {
            throw ConfigError(std::string("config is not valid JSON: ") + e.what());
        }
        return parse(j);
    }

    json resolved() const {
        json j;
        j["version"] = 1;
        j["experiment"] = experiment;
        j["seed"] = seed;
        j["threads"] = threads;
        j["output_dir"] = output_dir;
        j["measure"] = {{"N", N},
                        {"V", v_expression.empty() ? json(nullptr) : json(v_expression)},
                        {"tail_order", tail_order}};
        if (!v_file.empty()) j["measure"]["V_file"] = v_file;
        j["flow"] = {{"kind", flow_kind},     {"integrator", integrator},
                     {"dt", dt},              {"tol", tol},
                     {"n_ref_multiplier", n_ref_multiplier}};
        if (!u0_expression.empty()) j["flow"]["u0"] = u0_expression;
        j["stats"] = {{"count", count},
                      {"times", times},
                      {"probes", probe_exprs},
                      {"random_probes", random_probes},
                      {"shards", shards},
                      {"crn", crn},
                      {"slope_window", {slope_low, slope_high}},
                      {"ratio_tolerance", ratio_tolerance},
                      {"drift_tolerance", drift_tolerance},
                      {"tail_s", tail_s},
                      {"write_trajectories", write_trajectories}};
        if (!eps_ladder.empty()) j["stats"]["eps_ladder"] = eps_ladder;
        if (!gate_probes.empty()) j["stats"]["gate_probes"] = gate_probes;
        if (!orders.empty()) j["stats"]["orders"] = orders;
        if (experiment == "stability") j["stats"]["v0"] = stability_v0;
        j["defaults_applied"] = defaults_applied;
        return j;
    }
};

inline ExperimentConfig ExperimentConfig::parse(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    detail::reject_unknown_keys(
        j, {"version", "experiment", "seed", "threads", "output_dir", "measure", "flow", "stats"},
        "the config root");

    ExperimentConfig c;
    if (!j.contains("version")) throw ConfigError("missing required key 'version'");
    if (j.at("version").get<int>() != 1) throw ConfigError("unsupported config version");
    if (!j.contains("experiment")) throw ConfigError("missing required key 'experiment'");
    c.experiment = j.at("experiment").get<std::string>();
    if (!known_experiments().count(c.experiment))
        throw ConfigError("unknown experiment kind '" + c.experiment + "'");
    if (!j.contains("seed")) throw ConfigError("missing required key 'seed'");
    if (!j.at("seed").is_number_unsigned() && !j.at("seed").is_number_integer())
        throw ConfigError("'seed' must be an integer");
    c.seed = j.at("seed").get<std::uint64_t>();

    auto defaulted = [&](const std::string& name) { c.defaults_applied.push_back(name); };

    if (j.contains("threads"))
        c.threads = j.at("threads").get<int>();
    else
        defaulted("threads");
    if (j.contains("output_dir"))
        c.output_dir = j.at("output_dir").get<std::string>();
    else
        defaulted("output_dir");

    if (j.contains("measure")) {
        const json& m = j.at("measure");
        detail::reject_unknown_keys(m, {"N", "V", "V_file", "tail_order"}, "'measure'");
        if (m.contains("N"))
            c.N = m.at("N").get<int>();
        else
            defaulted("measure.N");
        if (m.contains("V") && !m.at("V").is_null())
            c.v_expression = m.at("V").get<std::string>();
        else
            defaulted("measure.V");
        if (m.contains("V_file")) c.v_file = m.at("V_file").get<std::string>();
        if (m.contains("tail_order"))
            c.tail_order = m.at("tail_order").get<int>();
        else
            defaulted("measure.tail_order");
    } else {
        defaulted("measure");
    }

    if (j.contains("flow")) {
        const json& f = j.at("flow");
        detail::reject_unknown_keys(
            f, {"kind", "integrator", "dt", "tol", "n_ref_multiplier", "u0"}, "'flow'");
        if (f.contains("kind"))
            c.flow_kind = f.at("kind").get<std::string>();
        else
            defaulted("flow.kind");
        if (f.contains("integrator"))
            c.integrator = f.at("integrator").get<std::string>();
        else
            defaulted("flow.integrator");
        if (f.contains("dt"))
            c.dt = f.at("dt").get<double>();
        else
            defaulted("flow.dt");
        if (f.contains("tol"))
            c.tol = f.at("tol").get<double>();
        else
            defaulted("flow.tol");
        if (f.contains("n_ref_multiplier"))
            c.n_ref_multiplier = f.at("n_ref_multiplier").get<int>();
        else
            defaulted("flow.n_ref_multiplier");
        if (f.contains("u0")) c.u0_expression = f.at("u0").get<std::string>();
    } else {
        defaulted("flow");
    }

    if (j.contains("stats")) {
        const json& s = j.at("stats");
        detail::reject_unknown_keys(
            s,
            {"count", "times", "probes", "random_probes", "eps_ladder", "v0", "gate_probes",
             "orders", "tail_s", "shards", "crn", "slope_window", "ratio_tolerance",
             "drift_tolerance", "write_trajectories"},
            "'stats'");
        if (s.contains("count"))
            c.count = s.at("count").get<std::size_t>();
        else
            defaulted("stats.count");
        if (s.contains("times"))
            c.times = s.at("times").get<std::vector<double>>();
        else
            defaulted("stats.times");
        if (s.contains("probes"))
            c.probe_exprs = s.at("probes").get<std::vector<std::string>>();
        if (s.contains("random_probes")) c.random_probes = s.at("random_probes").get<int>();
        if (s.contains("eps_ladder"))
            c.eps_ladder = s.at("eps_ladder").get<std::vector<double>>();
        if (s.contains("v0")) c.stability_v0 = s.at("v0").get<std::string>();
        if (s.contains("gate_probes"))
            c.gate_probes = s.at("gate_probes").get<std::vector<std::size_t>>();
        if (s.contains("orders")) c.orders = s.at("orders").get<std::vector<int>>();
        if (s.contains("tail_s")) c.tail_s = s.at("tail_s").get<double>();
        if (s.contains("shards")) c.shards = s.at("shards").get<std::size_t>();
        if (s.contains("crn")) c.crn = s.at("crn").get<bool>();
        if (s.contains("slope_window")) {
            const auto w = s.at("slope_window").get<std::vector<double>>();
            if (w.size() != 2) throw ConfigError("'slope_window' must have two entries");
            c.slope_low = w[0];
            c.slope_high = w[1];
        }
        if (s.contains("ratio_tolerance"))
            c.ratio_tolerance = s.at("ratio_tolerance").get<double>();
        if (s.contains("drift_tolerance"))
            c.drift_tolerance = s.at("drift_tolerance").get<double>();
        if (s.contains("write_trajectories"))
            c.write_trajectories = s.at("write_trajectories").get<bool>();
    } else {
        defaulted("stats");
    }

    if (c.N < 0) throw ConfigError("'measure.N' must be nonnegative");
    if (!(c.dt > 0)) throw ConfigError("'flow.dt' must be positive");
    if (c.count < 2) throw ConfigError("'stats.count' must be at least 2");
    return c;
}

}  // namespace bbmgibbs
