// Experiment runner: assembles the configured problem, runs the solver and
// the requested check suites, and writes machine-readable reports.

#include "fbsee/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

int finish(const fbsee::ExperimentOutcome& outcome) {
    for (const auto& c : outcome.checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << " (margin " << c.margin << ")";
        if (!c.pass && !c.witness.empty()) std::cout << " -- " << c.witness;
        std::cout << "\n";
    }
    if (!outcome.error.empty()) std::cerr << "error: " << outcome.error << "\n";
    if (!outcome.report_path.empty()) std::cout << "report: " << outcome.report_path << "\n";
    return outcome.exit_code;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"coupled forward-backward stochastic evolution solver"};
    app.require_subcommand(1);

    std::string config_path;
    std::string suite;
    std::string levels_arg;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<std::string> mode;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("config", config_path, "experiment config file")->required();
        cmd->add_option("--seed", seed, "override the RNG seed");
        cmd->add_option("--out", out_dir, "override the output directory");
        cmd->add_option("--mode", mode, "override the lattice mode (deterministic|tree)")
            ->check(CLI::IsMember({"deterministic", "tree"}));
    };

    CLI::App* solve = app.add_subcommand("solve", "run the full pipeline and enabled checks");
    add_common(solve);

    CLI::App* check = app.add_subcommand("check", "run one check suite");
    add_common(check);
    check->add_option("--suite", suite, "suite to run")->required()->check(
        CLI::IsMember({"assumptions", "optimality", "contraction", "duality", "oracle",
                       "convergence"}));

    CLI::App* sweep = app.add_subcommand("sweep", "re-run at refinement levels and tabulate errors");
    add_common(sweep);
    sweep->add_option("--levels", levels_arg, "comma-separated refinement levels")->required();

    CLI11_PARSE(app, argc, argv);

    fbsee::ExperimentConfig config;
    try {
        config = fbsee::parse_config_file(config_path);
    } catch (const fbsee::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return fbsee::kExitConfigError;
    }

    fbsee::ExperimentOverrides overrides;
    overrides.seed = seed;
    overrides.output_dir = out_dir;
    if (mode) {
        overrides.mode = *mode == "tree" ? fbsee::LatticeMode::Tree
                                         : fbsee::LatticeMode::Deterministic;
    }

    if (solve->parsed()) return finish(fbsee::run_experiment(config, overrides));

    if (check->parsed()) {
        overrides.suite = suite;
        return finish(fbsee::run_experiment(config, overrides));
    }

    // sweep
    std::vector<int> levels;
    try {
        size_t pos = 0;
        while (pos < levels_arg.size()) {
            size_t used = 0;
            levels.push_back(std::stoi(levels_arg.substr(pos), &used));
            pos += used;
            if (pos < levels_arg.size() && levels_arg[pos] == ',') ++pos;
        }
    } catch (...) {
        std::cerr << "config error: --levels expects comma-separated integers\n";
        return fbsee::kExitConfigError;
    }
    const auto outcome = fbsee::convergence_sweep(config, levels, overrides);
    if (!outcome.error.empty()) std::cerr << "error: " << outcome.error << "\n";
    for (const auto& row : outcome.rows) {
        std::cout << "level " << row.level << ": error " << row.error;
        if (row.order) std::cout << " (order " << *row.order << ")";
        std::cout << "\n";
    }
    if (!outcome.table_path.empty()) std::cout << "table: " << outcome.table_path << "\n";
    return outcome.exit_code;
}
