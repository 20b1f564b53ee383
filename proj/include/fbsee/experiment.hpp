#pragma once

#include "fbsee/config.hpp"
#include "fbsee/control.hpp"
#include "fbsee/problem.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fbsee {

/// Exit codes of the experiment runner (also the CLI process codes).
enum ExitCode : int {
    kExitOk = 0,
    kExitConfigError = 2,
    kExitSolverError = 3,
    kExitCheckFailure = 4,
};

struct ExperimentOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> output_dir;
    std::optional<LatticeMode> mode;
    std::optional<std::string> suite; // restrict checks to one suite
    std::optional<int> time_steps;
    std::optional<int> mesh_n;
};

struct ExperimentOutcome {
    int exit_code = kExitOk;
    std::vector<CheckResult> checks;
    std::string report_path;
    std::string error; // human-readable failure description, if any
};

/// Assembles the configured problem (after overrides).
ControlProblem build_problem(const ExperimentConfig& config);

/// Full pipeline: assemble, solve the optimal control problem, run the
/// enabled check suites, write report.json / trajectories.csv (plus
/// timings.json, which is excluded from the determinism guarantee).
ExperimentOutcome run_experiment(const ExperimentConfig& config,
                                 const ExperimentOverrides& overrides = {});

struct SweepRow {
    int level = 0;
    double error = 0.0;
    std::optional<double> order; // log2(e_prev / e_this)
};

struct SweepOutcome {
    int exit_code = kExitOk;
    std::vector<SweepRow> rows;
    std::string table_path;
    std::string error;
};

/// Re-runs the config at each refinement level (time steps for abstract
/// problems, mesh points for parabolic ones) and tabulates errors against
/// the configured reference, or against the finest level when there is
/// none. Writes sweep.csv.
SweepOutcome convergence_sweep(const ExperimentConfig& config, const std::vector<int>& levels,
                               const ExperimentOverrides& overrides = {});

/// Reference error of a solved experiment (used by the convergence check
/// and the sweep): |y0 - c e^-T| for the closed-form configuration,
/// relative L2 distance of y(0,.) to the decay profile for the heat
/// configuration.
double reference_error(const ExperimentConfig& config, const ControlProblem& problem);

} // namespace fbsee
