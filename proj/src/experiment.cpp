#include "fbsee/experiment.hpp"

#include "fbsee/lq.hpp"
#include "fbsee/parabolic.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fbsee {

namespace {

using Json = nlohmann::ordered_json;

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

ExperimentConfig apply_overrides(ExperimentConfig cfg, const ExperimentOverrides& ov) {
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.output_dir) cfg.output_dir = *ov.output_dir;
    if (ov.mode) cfg.mode = *ov.mode;
    if (ov.time_steps) cfg.time_steps = *ov.time_steps;
    if (ov.mesh_n) cfg.mesh_n = *ov.mesh_n;
    if (ov.suite) {
        if (!ExperimentConfig::known_checks().count(*ov.suite))
            throw ConfigError("unknown check suite '" + *ov.suite + "'");
        cfg.checks = {*ov.suite};
    }
    if (cfg.mode == LatticeMode::Tree && cfg.time_steps > BrownianLattice::kDefaultTreeCap)
        throw ConfigError("tree mode caps steps at " +
                          std::to_string(BrownianLattice::kDefaultTreeCap));
    return cfg;
}

ContinuationConfig continuation_config(const ExperimentConfig& cfg) {
    ContinuationConfig cc;
    cc.step_delta = cfg.step_delta;
    cc.picard_tol = cfg.picard_tol;
    cc.max_picard = cfg.max_picard;
    cc.measure_k = cfg.measure_k;
    cc.flat = cfg.flat;
    cc.seed = cfg.seed;
    return cc;
}

double sample_abs_max(const Expression& e, double horizon, int mesh_n) {
    double m = 0.0;
    for (int it = 0; it <= 16; ++it) {
        const double t = horizon * it / 16.0;
        const double wspan = 3.0 * std::sqrt(std::max(horizon, 1e-9));
        for (int iw = -2; iw <= 2; ++iw) {
            for (int ix = 0; ix <= std::max(1, mesh_n); ++ix) {
                const double x = static_cast<double>(ix) / std::max(1, mesh_n);
                m = std::max(m, std::abs(e.eval(t, iw * wspan / 2.0, x, x)));
            }
        }
    }
    return m;
}

} // namespace

ControlProblem build_problem(const ExperimentConfig& cfg) {
    const auto mode = cfg.mode == LatticeMode::Tree ? BrownianLattice::Mode::Tree
                                                    : BrownianLattice::Mode::Chain;
    if (cfg.problem == ProblemKind::LqAbstract) {
        require(cfg.dim == cfg.control_dim,
                "config-built problems use control_dim == dim (program the API for more)");
        const int n = cfg.dim;
        const double dt = cfg.horizon_t / cfg.time_steps;
        auto expr_mat = [&, n](const char* name) {
            const Expression e = cfg.lq_coeffs.at(name);
            return [e, dt, n](int i, double w) -> Mat {
                return e.eval(i * dt, w) * Mat::Identity(n, n);
            };
        };

        LqProblemSpec spec;
        spec.dim = n;
        spec.control_dim = n;
        spec.horizon_t = cfg.horizon_t;
        spec.steps = cfg.time_steps;
        spec.mode = mode;
        spec.a = expr_mat("A");
        spec.b = expr_mat("B");
        spec.d = expr_mat("D");
        spec.m = expr_mat("M");
        spec.q = expr_mat("Q");
        spec.n = expr_mat("N");
        {
            const Expression e = cfg.lq_coeffs.at("G");
            spec.g = [e, dt, n](int i, double w) -> Vec {
                return e.eval(i * dt, w) * Vec::Ones(n);
            };
        }
        {
            const Expression e = cfg.lq_coeffs.at("xi");
            const double T = cfg.horizon_t;
            spec.xi = [e, T, n](double w) -> Vec { return e.eval(T, w) * Vec::Ones(n); };
        }
        spec.h = cfg.lq_coeffs.at("h").eval(0.0, 0.0) * Mat::Identity(n, n);
        spec.bound_b = sample_abs_max(cfg.lq_coeffs.at("B"), cfg.horizon_t, 1) + 1e-9;
        spec.bound_d = sample_abs_max(cfg.lq_coeffs.at("D"), cfg.horizon_t, 1) + 1e-9;
        bool uses_t = false, uses_w = false;
        for (const auto& [name, e] : cfg.lq_coeffs) {
            if (name == "xi") continue;
            uses_t = uses_t || e.uses_t();
            uses_w = uses_w || e.uses_w();
        }
        spec.time_dependent = uses_t;
        spec.node_dependent = uses_w;
        return make_lq_problem(spec);
    }

    ParabolicProblem pp;
    pp.space_dim = cfg.problem == ProblemKind::Parabolic2d ? 2 : 1;
    pp.mesh_n = cfg.mesh_n;
    const int d = pp.space_dim;
    {
        const Expression ea = cfg.pde_coeffs.at("a");
        pp.a = [ea, d](double t, double w, double x1, double x2) -> Mat {
            return ea.eval(t, w, x1, x2) * Mat::Identity(d, d);
        };
        auto scalar_field = [&](const char* name) -> ParabolicProblem::ScalarField {
            const Expression e = cfg.pde_coeffs.at(name);
            if (e.is_constant() && e.eval(0, 0) == 0.0) return nullptr;
            return [e](double t, double w, double x1, double x2) {
                return e.eval(t, w, x1, x2);
            };
        };
        pp.b1 = scalar_field("b");
        pp.b2 = scalar_field("b2");
        pp.c = scalar_field("c");
        pp.nu = scalar_field("nu");
        pp.g = scalar_field("g");
        const Expression exi = cfg.pde_coeffs.at("xi");
        pp.xi = [exi](double w, double x1, double x2) { return exi.eval(0.0, w, x1, x2); };
    }
    pp.kappa = cfg.kappa;
    pp.big_k = cfg.big_k;
    bool uses_t = false, uses_w = false;
    for (const auto& [name, e] : cfg.pde_coeffs) {
        if (name == "xi") continue;
        uses_t = uses_t || e.uses_t();
        uses_w = uses_w || e.uses_w();
    }
    pp.coefficients_time_dependent = uses_t;
    pp.coefficients_node_dependent = uses_w;
    return assemble_parabolic(pp, TimeGrid(cfg.horizon_t, cfg.time_steps), mode);
}

double reference_error(const ExperimentConfig& cfg, const ControlProblem& problem) {
    if (cfg.reference == ReferenceKind::LqClosedForm) {
        OptimalControlResult res = solve_optimal_control(problem, continuation_config(cfg));
        const double c = cfg.lq_coeffs.at("xi").eval(cfg.horizon_t, 0.0);
        const double target = c * std::exp(-cfg.horizon_t);
        return std::abs(res.lam.y.at(0, 0)(0) - target) / std::abs(target);
    }
    if (cfg.reference == ReferenceKind::HeatDecay) {
        // Reference is the uncontrolled deterministic reduction: state
        // equation under u = 0.
        AdaptedProcess u0(problem.lattice, problem.control_dim, problem.steps() - 1);
        BseeInput bin{&problem, &u0, nullptr};
        BseeResult state = solve_bsee(bin);
        const Vec ref = heat_decay_reference(problem.parabolic->mesh_n, cfg.horizon_t);
        const Vec got = state.y.at(0, 0);
        require(problem.parabolic->space_dim == 1, "heat-decay reference is one-dimensional");
        Vec diff = got - ref;
        return std::sqrt(norm_h_sq(diff, problem.triple) /
                         std::max(1e-300, ref.dot(problem.triple.mass_h * ref)));
    }
    throw ConfigError("reference_error: config declares no reference");
}

namespace {

struct SolveArtifacts {
    bool solved = false;
    OptimalControlResult result;
};

void ensure_solved(const ExperimentConfig& cfg, const ControlProblem& problem,
                   SolveArtifacts& art) {
    if (!art.solved) {
        art.result = solve_optimal_control(problem, continuation_config(cfg));
        art.solved = true;
    }
}

void run_check_suites(const ExperimentConfig& cfg, const ControlProblem& problem,
                      SolveArtifacts& art, std::vector<CheckResult>& checks) {
    const std::uint64_t seed = cfg.seed;

    if (cfg.checks.count("optimality")) {
        ensure_solved(cfg, problem, art);
        const auto nc = check_necessary_condition(problem, art.result.u, art.result.lam, 8, seed);
        checks.push_back({"optimality.stationarity", nc.sup_grad_norm < 1e-6,
                          1e-6 - nc.sup_grad_norm, nc.pass ? "" : nc.witness});
        checks.push_back({"optimality.variational-inequality", nc.worst_variational >= -1e-8,
                          nc.worst_variational + 1e-8, nc.witness});
        const auto pt = perturbation_test(problem, art.result.u, 50, 1e-3, seed);
        checks.push_back({"optimality.cost-perturbation", pt.pass,
                          pt.worst_cost_decrease + 1e-9, pt.witness});
        checks.push_back({"optimality.gradient-identity", pt.worst_relative_gap < 1e-5,
                          1e-5 - pt.worst_relative_gap, ""});
    }

    if (cfg.checks.count("contraction")) {
        ensure_solved(cfg, problem, art);
        const double monot_c = problem.integrand.monotonicity_c;
        Stage0Solver stage0(problem, monot_c);
        const auto zero = AuxiliaryForcing::zero(problem, 0.0, 0.0);
        const double k_hat =
            measure_contraction_k(problem, 0.0, zero, 20, seed, monot_c, stage0);
        const double delta = suggested_step_delta(k_hat);
        const auto ratios =
            contraction_ratios_at(problem, 0.0, delta, zero, 20, seed + 1, monot_c, stage0);
        double worst = 0.0;
        for (double r : ratios) worst = std::max(worst, r);
        std::ostringstream os;
        os << "measured K = " << k_hat << ", delta0 = " << delta << ", " << ratios.size()
           << " probe pairs";
        checks.push_back({"contraction.ratios-below-one", worst < 1.0, 1.0 - worst, os.str()});

        bool decay_ok = true;
        std::string decay_witness;
        for (const auto& stage : art.result.report.stages) {
            // increments[j] belongs to Picard iteration j+1; require decay
            // from iteration 2 onward.
            for (size_t i = 1; i + 1 < stage.increments.size(); ++i) {
                if (stage.increments[i + 1] > stage.increments[i] * (1.0 + 1e-12)) {
                    decay_ok = false;
                    std::ostringstream ow;
                    ow << "increment rose at stage rho=" << stage.rho << ", iteration " << i + 2;
                    decay_witness = ow.str();
                }
            }
        }
        checks.push_back({"contraction.picard-decay", decay_ok, 0.0, decay_witness});
    }

    if (cfg.checks.count("duality")) {
        ensure_solved(cfg, problem, art);
        checks.push_back({"duality.converged", art.result.report.duality_residual < 1e-8,
                          1e-8 - art.result.report.duality_residual, ""});

        Rng rng(seed + 7);
        AdaptedProcess u1 = random_control(problem, 1.0, rng);
        AdaptedProcess u2 = random_control(problem, 1.0, rng);
        TripleProcess lam1 = solve_decoupled(problem, u1);
        TripleProcess lam2 = solve_decoupled(problem, u2);
        const double pair_res = duality_residual(lam1, lam2, problem, &u1, &u2);
        checks.push_back({"duality.decoupled-pair", pair_res < 1e-8, 1e-8 - pair_res, ""});

        // Negative control: garbage triples must blow the identity up.
        TripleProcess junk1 = TripleProcess::zero(problem.lattice, problem.dim());
        TripleProcess junk2 = TripleProcess::zero(problem.lattice, problem.dim());
        for (int i = 0; i <= problem.steps(); ++i) {
            for (int j = 0; j < problem.lattice->node_count(i); ++j) {
                junk1.y.at(i, j) = rng.uniform_vec(problem.dim());
                junk1.k.at(i, j) = rng.uniform_vec(problem.dim());
                junk2.y.at(i, j) = rng.uniform_vec(problem.dim());
                junk2.k.at(i, j) = rng.uniform_vec(problem.dim());
                if (i < problem.steps()) {
                    junk1.z.at(i, j) = rng.uniform_vec(problem.dim());
                    junk2.z.at(i, j) = rng.uniform_vec(problem.dim());
                }
            }
        }
        const double junk_res = duality_residual(junk1, junk2, problem, &u1, &u2);
        checks.push_back({"duality.negative-control", junk_res > 1e-3, junk_res - 1e-3, ""});
    }

    if (cfg.checks.count("oracle")) {
        ensure_solved(cfg, problem, art);
        TripleProcess oracle = brute_force_oracle(problem);
        const double dist = m2_distance(art.result.lam, oracle, problem.triple);
        checks.push_back({"oracle.m2-distance", dist < 1e-6, 1e-6 - dist, ""});
    }

    if (cfg.checks.count("convergence")) {
        const double err = reference_error(cfg, problem);
        std::ostringstream os;
        os << "reference error " << err << " vs tolerance " << cfg.reference_tol;
        checks.push_back({"convergence.reference-error", err < cfg.reference_tol,
                          cfg.reference_tol - err, os.str()});
    }
}

void write_report(const ExperimentConfig& cfg, const std::string& dir,
                  const std::vector<CheckResult>& checks, const SolveArtifacts& art,
                  const ControlProblem* problem, const std::string& error,
                  std::string& report_path) {
    std::filesystem::create_directories(dir);

    Json report;
    report["summary"] = Json::object();
    report["summary"]["problem"] = cfg.problem == ProblemKind::LqAbstract ? "lq-abstract"
                                   : cfg.problem == ProblemKind::Parabolic1d ? "parabolic-1d"
                                                                             : "parabolic-2d";
    report["summary"]["mode"] =
        cfg.mode == LatticeMode::Deterministic ? "deterministic" : "tree";
    report["summary"]["steps"] = cfg.time_steps;
    report["summary"]["seed"] = cfg.seed;
    if (problem) {
        report["summary"]["dim"] = problem->dim();
        report["summary"]["control_dim"] = problem->control_dim;
    }
    if (!error.empty()) report["summary"]["error"] = error;

    if (art.solved) {
        const auto& res = art.result;
        Json solve;
        solve["cost_total"] = res.cost.total;
        solve["cost_running"] = res.cost.running_part;
        solve["cost_initial_state_term"] = res.cost.terminal_part;
        const Vec y0 = res.lam.y.at(0, 0);
        const Vec u0 = res.u.at(0, 0);
        solve["y0"] = std::vector<double>(y0.data(), y0.data() + y0.size());
        solve["u0"] = std::vector<double>(u0.data(), u0.data() + u0.size());
        solve["final_residual"] = res.report.final_residual;
        solve["duality_residual"] = res.report.duality_residual;
        solve["resolve_residual"] = res.resolve_residual;
        solve["rho_schedule"] = res.report.rho_schedule;
        solve["step_delta"] = res.report.step_delta;
        solve["retried_with_halved_step"] = res.report.retried_with_halved_step;
        if (res.report.measured_k) solve["measured_k"] = *res.report.measured_k;
        Json stages = Json::array();
        for (const auto& s : res.report.stages) {
            Json st;
            st["rho"] = s.rho;
            st["picard_iterations"] = s.picard_iterations;
            st["increments"] = s.increments;
            st["contraction_ratios"] = s.contraction_ratios;
            stages.push_back(std::move(st));
        }
        solve["stages"] = std::move(stages);
        report["solve"] = std::move(solve);
    }

    Json jchecks = Json::array();
    bool all_pass = true;
    for (const auto& c : checks) {
        Json jc;
        jc["name"] = c.name;
        jc["pass"] = c.pass;
        jc["margin"] = c.margin;
        jc["witness"] = c.witness;
        jchecks.push_back(std::move(jc));
        all_pass = all_pass && c.pass;
    }
    report["checks"] = std::move(jchecks);
    report["status"] = (!error.empty() || !all_pass) ? "fail" : "pass";

    report_path = dir + "/report.json";
    std::ofstream out(report_path);
    out << report.dump(2) << "\n";
}

void write_trajectories(const ExperimentConfig& cfg, const ControlProblem& problem,
                        const OptimalControlResult& res, const std::string& dir) {
    std::ofstream out(dir + "/trajectories.csv");
    out << "t,x,node,y,z,k,u\n";
    const auto& lat = *problem.lattice;
    const int N = problem.steps();
    for (int i = 0; i <= N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            for (int c = 0; c < problem.dim(); ++c) {
                // x is the mesh coordinate for one-dimensional meshes,
                // otherwise the dof index.
                const double x =
                    (problem.parabolic && problem.parabolic->space_dim == 1)
                        ? problem.parabolic->mesh_x[c]
                        : static_cast<double>(c);
                out << format_double(lat.grid().time(i)) << "," << format_double(x) << "," << j
                    << "," << format_double(res.lam.y.at(i, j)(c)) << ",";
                if (i < N) out << format_double(res.lam.z.at(i, j)(c));
                out << "," << format_double(res.lam.k.at(i, j)(c)) << ",";
                if (i < N && c < problem.control_dim) out << format_double(res.u.at(i, j)(c));
                out << "\n";
            }
        }
    }
    (void)cfg;
}

} // namespace

ExperimentOutcome run_experiment(const ExperimentConfig& config,
                                 const ExperimentOverrides& overrides) {
    ExperimentOutcome outcome;
    ExperimentConfig cfg;
    try {
        cfg = apply_overrides(config, overrides);
    } catch (const ConfigError& e) {
        outcome.exit_code = kExitConfigError;
        outcome.error = e.what();
        return outcome;
    }

    const auto t_start = std::chrono::steady_clock::now();
    std::vector<CheckResult> checks;
    SolveArtifacts art;
    std::optional<ControlProblem> problem;

    try {
        try {
            problem.emplace(build_problem(cfg));
        } catch (const ValidationError& e) {
            // Broken data surfaces as a failed assumptions check (with the
            // witness) when that suite is enabled; otherwise it is a
            // configuration error.
            if (cfg.checks.count("assumptions")) {
                checks.push_back({"assumptions.assembly", false,
                                  -std::numeric_limits<double>::infinity(), e.what()});
                write_report(cfg, cfg.output_dir, checks, art, nullptr, "", outcome.report_path);
                outcome.checks = checks;
                outcome.exit_code = kExitCheckFailure;
                return outcome;
            }
            outcome.exit_code = kExitConfigError;
            outcome.error = e.what();
            return outcome;
        }

        if (cfg.checks.count("assumptions")) {
            ValidationReport vr = validate_assumptions(*problem, 40, cfg.seed);
            for (auto& c : vr.checks)
                checks.push_back({"assumptions." + c.name, c.pass, c.margin, c.witness});
            if (!vr.all_pass()) {
                write_report(cfg, cfg.output_dir, checks, art, &*problem, "",
                             outcome.report_path);
                outcome.checks = checks;
                outcome.exit_code = kExitCheckFailure;
                return outcome;
            }
        }

        const bool needs_solve = cfg.checks.count("optimality") || cfg.checks.count("duality") ||
                                 cfg.checks.count("contraction") || cfg.checks.count("oracle") ||
                                 cfg.checks.empty() || !overrides.suite;
        if (needs_solve) ensure_solved(cfg, *problem, art);
        run_check_suites(cfg, *problem, art, checks);
    } catch (const ConfigError& e) {
        outcome.exit_code = kExitConfigError;
        outcome.error = e.what();
        return outcome;
    } catch (const Error& e) {
        outcome.exit_code = kExitSolverError;
        outcome.error = e.what();
        write_report(cfg, cfg.output_dir, checks, art, problem ? &*problem : nullptr, e.what(),
                     outcome.report_path);
        return outcome;
    }

    write_report(cfg, cfg.output_dir, checks, art, &*problem, "", outcome.report_path);
    if (art.solved) write_trajectories(cfg, *problem, art.result, cfg.output_dir);

    {
        // Wall-clock timings live outside report.json: reports must be
        // byte-identical across runs for a fixed seed.
        const auto t_end = std::chrono::steady_clock::now();
        const double secs = std::chrono::duration<double>(t_end - t_start).count();
        Json timings;
        timings["total_seconds"] = secs;
        std::ofstream out(cfg.output_dir + "/timings.json");
        out << timings.dump(2) << "\n";
    }

    outcome.checks = checks;
    for (const auto& c : checks)
        if (!c.pass) outcome.exit_code = kExitCheckFailure;
    return outcome;
}

SweepOutcome convergence_sweep(const ExperimentConfig& config, const std::vector<int>& levels,
                               const ExperimentOverrides& overrides) {
    SweepOutcome outcome;
    ExperimentConfig base;
    try {
        base = apply_overrides(config, overrides);
        require(!levels.empty(), "sweep: need at least one level");
    } catch (const Error& e) {
        outcome.exit_code = kExitConfigError;
        outcome.error = e.what();
        return outcome;
    }

    const bool parabolic = base.problem != ProblemKind::LqAbstract;
    std::vector<double> errors;
    std::vector<double> y0_values; // for self-reference without an analytic target

    for (int level : levels) {
        ExperimentConfig cfg = base;
        if (parabolic) cfg.mesh_n = level;
        else cfg.time_steps = level;
        try {
            ControlProblem problem = build_problem(cfg);
            if (cfg.reference != ReferenceKind::None) {
                errors.push_back(reference_error(cfg, problem));
            } else {
                require(!parabolic,
                        "sweep: parabolic configs need an analytic reference (meshes differ)");
                OptimalControlResult res = solve_optimal_control(problem, continuation_config(cfg));
                y0_values.push_back(res.lam.y.at(0, 0)(0));
            }
        } catch (const ConfigError& e) {
            outcome.exit_code = kExitConfigError;
            outcome.error = e.what();
            return outcome;
        } catch (const Error& e) {
            outcome.exit_code = kExitSolverError;
            outcome.error = std::string("level ") + std::to_string(level) + ": " + e.what();
            return outcome; // partial table already collected in outcome.rows
        }
    }

    if (base.reference == ReferenceKind::None) {
        const double finest = y0_values.back();
        for (size_t i = 0; i + 1 < y0_values.size(); ++i)
            errors.push_back(std::abs(y0_values[i] - finest));
        errors.push_back(0.0); // finest level has no self-error
    }

    for (size_t i = 0; i < levels.size(); ++i) {
        SweepRow row;
        row.level = levels[i];
        row.error = errors[i];
        if (i > 0 && errors[i] > 0.0 && errors[i - 1] > 0.0)
            row.order = std::log2(errors[i - 1] / errors[i]);
        outcome.rows.push_back(row);
    }

    std::filesystem::create_directories(base.output_dir);
    outcome.table_path = base.output_dir + "/sweep.csv";
    std::ofstream out(outcome.table_path);
    out << "level,error,order\n";
    for (const auto& row : outcome.rows) {
        out << row.level << "," << format_double(row.error) << ",";
        if (row.order) out << format_double(*row.order);
        out << "\n";
    }
    return outcome;
}

} // namespace fbsee
