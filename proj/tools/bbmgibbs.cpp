#include <bbmgibbs/experiments.hpp>

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace fs = std::filesystem;
using namespace bbmgibbs;

namespace {

void write_file(const fs::path& path, const std::string& content) {
    fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << content;
}

int run_mode(const std::string& kind, const std::string& config_path,
             const std::string& output_override, int threads_override) {
    ExperimentConfig cfg;
    try {
        cfg = ExperimentConfig::load(config_path);
        if (cfg.experiment != kind)
            throw ConfigError("config declares experiment '" + cfg.experiment +
                              "' but the subcommand is '" + kind + "'");
    } catch (const std::exception& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    }
    if (!output_override.empty()) cfg.output_dir = output_override;
    if (threads_override > 0) cfg.threads = threads_override;

    const auto t0 = std::chrono::steady_clock::now();
    ExperimentResult result;
    try {
        result = run_experiment(cfg);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const FlowError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::runtime_error& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    result.metadata["elapsed_seconds"] = elapsed;
    result.metadata["timestamp_utc"] = [] {
        char buf[32];
        const std::time_t now = std::time(nullptr);
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
        return std::string(buf);
    }();

    try {
        const fs::path dir(cfg.output_dir);
        fs::create_directories(dir);
        write_file(dir / "metadata.json", result.metadata.dump(2) + "\n");
        write_file(dir / "results.json", result.report.to_json().dump(2) + "\n");
        std::string csv;
        for (const auto& line : result.csv_lines) csv += line + "\n";
        write_file(dir / "results.csv", csv);
        for (const auto& [rel, content] : result.extra_files) write_file(dir / rel, content);
    } catch (const std::exception& e) {
        std::cerr << "output error: " << e.what() << "\n";
        return 3;
    }

    for (const auto& v : result.report.verdicts)
        std::cout << (v.pass ? "PASS " : "FAIL ") << v.name << "  observed=" << v.observed
                  << " threshold=" << v.threshold << "\n";
    std::cout << (result.exit_code == 0 ? "ok: " : "verdict failure: ") << cfg.output_dir
              << "/results.json\n";
    return result.exit_code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Spectral simulation and statistical verification for the truncated"
                 " BBM flows and their Gibbs-type Gaussian measures"};
    app.require_subcommand(1);

    std::string config_path, output_override;
    int threads = 0;

    const std::vector<std::string> kinds = {"sample",    "evolve",      "invariance", "spectrum",
                                            "stability", "convergence", "closeness"};
    std::string selected;
    for (const auto& kind : kinds) {
        auto* sub = app.add_subcommand(kind, "Run the " + kind + " experiment");
        sub->add_option("config", config_path, "experiment config (JSON)")->required();
        sub->add_option("-o,--output-dir", output_override, "override the output directory");
        sub->add_option("-j,--threads", threads, "worker-pool size (default: BBMGIBBS_THREADS)");
        sub->callback([&selected, kind] { selected = kind; });
    }
    auto* desc = app.add_subcommand("describe", "Print the resolved plan without computing");
    desc->add_option("config", config_path, "experiment config (JSON)")->required();
    desc->callback([&selected] { selected = "describe"; });

    CLI11_PARSE(app, argc, argv);

    if (selected == "describe") {
        try {
            const ExperimentConfig cfg = ExperimentConfig::load(config_path);
            std::cout << describe(cfg);
            return 0;
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return 2;
        }
    }
    return run_mode(selected, config_path, output_override, threads);
}
