#include "fbsee/continuation.hpp"

#include <cmath>
#include <memory>
#include <sstream>

namespace fbsee {

namespace {

double effective_monot_c(const ControlProblem& problem, const ContinuationConfig& config) {
    const double c = config.monot_c >= 0.0 ? config.monot_c : problem.integrand.monotonicity_c;
    require(c > 0.0, "continuation: monotonicity constant must be positive");
    return c;
}

AdaptedProcess random_process(const ControlProblem& problem, int last_level, Rng& rng) {
    AdaptedProcess p(problem.lattice, problem.dim(), last_level);
    for (int i = 0; i <= last_level; ++i)
        for (int j = 0; j < problem.lattice->node_count(i); ++j)
            p.at(i, j) = rng.uniform_vec(problem.dim());
    return p;
}

TripleProcess random_triple(const ControlProblem& problem, Rng& rng) {
    const int N = problem.steps();
    return TripleProcess(random_process(problem, N, rng), random_process(problem, N, rng),
                         random_process(problem, N - 1, rng));
}

TripleProcess perturbed(const TripleProcess& base, double scale, const ControlProblem& problem,
                        Rng& rng) {
    TripleProcess out = base;
    TripleProcess noise = random_triple(problem, rng);
    noise *= scale;
    out += noise;
    return out;
}

} // namespace

AuxiliaryForcing AuxiliaryForcing::zero(const ControlProblem& problem, double rho, double rho0) {
    require(0.0 <= rho0 && rho0 <= rho && rho <= 1.0,
            "AuxiliaryForcing: need 0 <= rho0 <= rho <= 1");
    const int N = problem.steps();
    AuxiliaryForcing f;
    f.b0 = AdaptedProcess(problem.lattice, problem.dim(), N - 1);
    f.g0 = AdaptedProcess(problem.lattice, problem.dim(), N - 1);
    f.f0 = AdaptedProcess(problem.lattice, problem.dim(), N - 1);
    f.rho = rho;
    f.rho0 = rho0;
    return f;
}

Stage0Solver::Stage0Solver(const ControlProblem& problem, double monot_c)
    : problem_(&problem), monot_c_(monot_c) {}

TripleProcess Stage0Solver::solve(const AuxiliaryForcing& forcing) {
    const ControlProblem& p = *problem_;
    const int N = p.steps();

    // rho = 0: the y-equation carries no control term and decouples.
    BseeInput bin{&p, nullptr, &forcing.f0};
    BseeResult state = solve_bsee(bin);

    // Then the k-equation is linear with loads C y + b0 and C z + g0.
    AdaptedProcess drift = forcing.b0;
    AdaptedProcess diffusion = forcing.g0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < p.lattice->node_count(i); ++j) {
            drift.at(i, j) += monot_c_ * state.y.at(i, j);
            diffusion.at(i, j) += monot_c_ * state.z.at(i, j);
        }
    }
    SeeInput see{&p, [&p](const Vec& y0) -> Vec { return -p.integrand.grad_h(y0); }, &drift,
                 &diffusion};
    AdaptedProcess k = solve_see(see, state.y.at(0, 0));

    TripleProcess lam(std::move(k), std::move(state.y), std::move(state.z));
    last_ = lam;
    return lam;
}

/// Stage solver at level rho: every solve() call runs its own Picard
/// iteration of the frozen map around the solver one level down.
class RecursiveStageSolver : public StageSolver {
public:
    RecursiveStageSolver(const ControlProblem& problem, const ContinuationConfig& config,
                         double rho, double rho0, StageSolver* prev)
        : problem_(&problem), config_(&config), rho_(rho), rho0_(rho0), prev_(prev) {}

    TripleProcess solve(const AuxiliaryForcing& forcing) override {
        TripleProcess warm =
            last_ ? *last_
                  : (prev_->last_solution() ? *prev_->last_solution()
                                            : TripleProcess::zero(problem_->lattice, problem_->dim()));
        TripleProcess lam =
            solve_stage(rho_, rho0_, forcing, *problem_, *config_, *prev_, warm, nullptr);
        last_ = lam;
        return lam;
    }

    double rho() const override { return rho_; }

private:
    const ControlProblem* problem_;
    const ContinuationConfig* config_;
    double rho_, rho0_;
    StageSolver* prev_;
};

TripleProcess apply_map_i(const TripleProcess& lam_prime, double rho, double rho0,
                          const AuxiliaryForcing& forcing, const ControlProblem& problem,
                          double monot_c, StageSolver& solver_at_rho0) {
    require(rho0 <= rho, "apply_map_i: need rho0 <= rho");
    if (rho == rho0) return solver_at_rho0.solve(forcing);

    const double drho = rho - rho0;
    const int N = problem.steps();

    AuxiliaryForcing folded = forcing;
    folded.rho = rho0;
    folded.rho0 = rho0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < problem.lattice->node_count(i); ++j) {
            const double w = problem.w(i, j);
            const Vec yp = lam_prime.y.at(i, j);
            const Vec zp = lam_prime.z.at(i, j);
            const Vec kp = lam_prime.k.at(i, j);
            const Vec up = problem.minimizer.gamma(i, w, problem.cache->adjoint_d(i, j) * kp);
            folded.b0.at(i, j) +=
                drho * (problem.integrand.grad_l_y(i, w, yp, zp, up) - monot_c * yp);
            folded.g0.at(i, j) +=
                drho * (problem.integrand.grad_l_z(i, w, yp, zp, up) - monot_c * zp);
            folded.f0.at(i, j) += drho * (problem.cache->d(i, j) * up);
            if (!folded.b0.at(i, j).allFinite() || !folded.g0.at(i, j).allFinite() ||
                !folded.f0.at(i, j).allFinite())
                throw SolverError("apply_map_i: non-finite folded forcing at time index " +
                                  std::to_string(i));
        }
    }
    return solver_at_rho0.solve(folded);
}

TripleProcess solve_stage(double rho, double rho0, const AuxiliaryForcing& forcing,
                          const ControlProblem& problem, const ContinuationConfig& config,
                          StageSolver& solver_at_rho0, const TripleProcess& warm_start,
                          StageRecord* record) {
    if (record) {
        record->rho = rho;
        record->rho0 = rho0;
    }
    const double monot_c = effective_monot_c(problem, config);

    if (rho == rho0) {
        // The map ignores its argument entirely: one application suffices.
        TripleProcess lam = solver_at_rho0.solve(forcing);
        if (record) record->picard_iterations = 1;
        return lam;
    }

    TripleProcess current = warm_start;
    double last_increment = std::numeric_limits<double>::infinity();
    double last_ratio = 0.0;
    for (int it = 1; it <= config.max_picard; ++it) {
        TripleProcess next =
            apply_map_i(current, rho, rho0, forcing, problem, monot_c, solver_at_rho0);
        const double inc = m2_distance(next, current, problem.triple);
        if (record) record->increments.push_back(inc);
        if (std::isfinite(last_increment) && last_increment > 0.0) last_ratio = inc / last_increment;
        last_increment = inc;
        current = std::move(next);
        if (inc < config.picard_tol) {
            if (record) {
                record->picard_iterations = it;
                if (config.measure_k) {
                    record->contraction_ratios = contraction_ratios_at(
                        problem, rho0, rho - rho0, forcing, std::max(3, config.k_probes / 2),
                        config.seed + 17, monot_c, solver_at_rho0);
                }
            }
            return current;
        }
    }
    std::ostringstream os;
    os << "solve_stage: no convergence in " << config.max_picard << " iterations at rho=" << rho
       << " (last increment " << last_increment << ", last ratio " << last_ratio
       << "); the continuation step may be too large";
    throw SolverError(os.str());
}

std::vector<double> contraction_ratios_at(const ControlProblem& problem, double rho0, double delta,
                                          const AuxiliaryForcing& forcing, int pairs,
                                          std::uint64_t seed, double monot_c,
                                          StageSolver& solver_at_rho0) {
    const double rho = std::min(rho0 + delta, 1.0);
    TripleProcess base = solver_at_rho0.solve(forcing);
    Rng rng(seed);
    const double scales[3] = {1e-2, 1e-1, 1.0};
    std::vector<double> ratios;
    for (int p = 0; p < pairs; ++p) {
        const double s = scales[p % 3];
        TripleProcess lam1 = perturbed(base, s, problem, rng);
        TripleProcess lam2 = perturbed(base, s, problem, rng);
        const double denom = m2_distance(lam1, lam2, problem.triple);
        if (denom <= 1e-14) continue;
        TripleProcess i1 = apply_map_i(lam1, rho, rho0, forcing, problem, monot_c, solver_at_rho0);
        TripleProcess i2 = apply_map_i(lam2, rho, rho0, forcing, problem, monot_c, solver_at_rho0);
        ratios.push_back(m2_distance(i1, i2, problem.triple) / denom);
    }
    if (ratios.empty()) throw SolverError("contraction_ratios_at: all probe pairs degenerate");
    return ratios;
}

double measure_contraction_k(const ControlProblem& problem, double rho0,
                             const AuxiliaryForcing& forcing, int probes, std::uint64_t seed,
                             double monot_c, StageSolver& solver_at_rho0,
                             std::vector<double>* ratios_out) {
    require(probes > 0, "measure_contraction_k: probes must be positive");
    require(rho0 < 1.0, "measure_contraction_k: rho0 must be below one");
    const double rho = 1.0; // probe the full remaining step
    TripleProcess base = solver_at_rho0.solve(forcing);
    Rng rng(seed);
    const double scales[3] = {1e-2, 1e-1, 1.0};
    double k_hat = 0.0;
    int used = 0;
    for (int p = 0; p < probes; ++p) {
        const double s = scales[p % 3];
        TripleProcess lam1 = perturbed(base, s, problem, rng);
        TripleProcess lam2 = perturbed(base, s, problem, rng);
        const double denom_sq = m2_norm_sq(lam1 - lam2, problem.triple);
        if (denom_sq <= 1e-28) continue; // degenerate pair, skip
        TripleProcess i1 = apply_map_i(lam1, rho, rho0, forcing, problem, monot_c, solver_at_rho0);
        TripleProcess i2 = apply_map_i(lam2, rho, rho0, forcing, problem, monot_c, solver_at_rho0);
        const double num_sq = m2_norm_sq(i1 - i2, problem.triple);
        const double r = num_sq / ((rho - rho0) * denom_sq);
        if (ratios_out) ratios_out->push_back(r);
        k_hat = std::max(k_hat, r);
        ++used;
    }
    if (used == 0) throw SolverError("measure_contraction_k: all probe pairs degenerate");
    return k_hat;
}

double suggested_step_delta(double measured_k, double min_clamp) {
    double delta = measured_k > 0.0 ? std::min(1.0 / (2.0 * measured_k), 1.0) : 1.0;
    return std::min(1.0, std::max(delta, min_clamp));
}

namespace {

// Opt-in accelerator: freeze every cross term at the previous iterate and
// run a single-level Picard at the target rho. Each iteration is one
// decoupled pass; no stage recursion. Validated against the staged mode.
TripleProcess solve_flat(const ControlProblem& problem, const ContinuationConfig& config,
                         ContinuationReport& report) {
    const int N = problem.steps();
    StageRecord record;
    record.rho = 1.0;
    record.rho0 = 0.0;

    TripleProcess current = TripleProcess::zero(problem.lattice, problem.dim());
    double last_increment = std::numeric_limits<double>::infinity();
    for (int it = 1; it <= config.max_picard; ++it) {
        // Control and cost-gradient loads along the frozen iterate.
        AdaptedProcess f0(problem.lattice, problem.dim(), N - 1);
        AdaptedProcess drift(problem.lattice, problem.dim(), N - 1);
        AdaptedProcess diffusion(problem.lattice, problem.dim(), N - 1);
        for (int i = 0; i < N; ++i) {
            for (int j = 0; j < problem.lattice->node_count(i); ++j) {
                const double w = problem.w(i, j);
                const Vec kp = current.k.at(i, j);
                const Vec yp = current.y.at(i, j);
                const Vec zp = current.z.at(i, j);
                const Vec up = problem.minimizer.gamma(i, w, problem.cache->adjoint_d(i, j) * kp);
                f0.at(i, j) = problem.cache->d(i, j) * up;
                drift.at(i, j) = problem.integrand.grad_l_y(i, w, yp, zp, up);
                diffusion.at(i, j) = problem.integrand.grad_l_z(i, w, yp, zp, up);
            }
        }
        BseeInput bin{&problem, nullptr, &f0};
        BseeResult state = solve_bsee(bin);
        SeeInput see{&problem,
                     [&problem](const Vec& y0) -> Vec { return -problem.integrand.grad_h(y0); },
                     &drift, &diffusion};
        AdaptedProcess k = solve_see(see, state.y.at(0, 0));
        TripleProcess next(std::move(k), std::move(state.y), std::move(state.z));

        const double inc = m2_distance(next, current, problem.triple);
        record.increments.push_back(inc);
        current = std::move(next);
        if (inc < config.picard_tol) {
            record.picard_iterations = it;
            report.stages.push_back(std::move(record));
            return current;
        }
        last_increment = inc;
    }
    throw SolverError("flat continuation: no convergence in " +
                      std::to_string(config.max_picard) + " iterations (last increment " +
                      std::to_string(last_increment) + ")");
}

std::pair<TripleProcess, ContinuationReport>
solve_staged(const ControlProblem& problem, const ContinuationConfig& config, double step_delta,
             std::optional<double> measured_k) {
    ContinuationReport report;
    report.measured_k = measured_k;
    report.step_delta = step_delta;
    const double monot_c = effective_monot_c(problem, config);

    Stage0Solver stage0(problem, monot_c);
    const AuxiliaryForcing zero_forcing = AuxiliaryForcing::zero(problem, 0.0, 0.0);

    // Stage 0 solve (rho = 0), recorded as the head of the schedule.
    TripleProcess lam = stage0.solve(zero_forcing);
    report.rho_schedule.push_back(0.0);
    {
        StageRecord rec;
        rec.rho = 0.0;
        rec.rho0 = 0.0;
        rec.picard_iterations = 1;
        report.stages.push_back(std::move(rec));
    }

    // Build the solver chain and walk the schedule.
    std::vector<std::unique_ptr<StageSolver>> chain;
    std::vector<double> rhos;
    double rho = 0.0;
    while (rho < 1.0) {
        rho = std::min(rho + step_delta, 1.0);
        rhos.push_back(rho);
    }
    StageSolver* prev = &stage0;
    for (size_t m = 0; m < rhos.size(); ++m) {
        const double rho0 = m == 0 ? 0.0 : rhos[m - 1];
        // The callee chain stops one level below the current stage; the
        // top-level stage itself is run explicitly to capture its record.
        StageRecord rec;
        AuxiliaryForcing forcing = AuxiliaryForcing::zero(problem, rhos[m], rho0);
        lam = solve_stage(rhos[m], rho0, forcing, problem, config, *prev, lam, &rec);
        report.rho_schedule.push_back(rhos[m]);
        report.stages.push_back(std::move(rec));
        if (rhos[m] < 1.0) {
            chain.push_back(std::make_unique<RecursiveStageSolver>(problem, config, rhos[m], rho0,
                                                                   prev));
            chain.back()->seed_warm_start(lam);
            prev = chain.back().get();
        }
    }
    return {lam, std::move(report)};
}

} // namespace

std::pair<TripleProcess, ContinuationReport>
solve_hamiltonian_system(const ControlProblem& problem, const ContinuationConfig& config) {
    const double monot_c = effective_monot_c(problem, config);

    ContinuationReport report;
    TripleProcess lam;

    if (config.flat) {
        lam = solve_flat(problem, config, report);
        report.rho_schedule = {0.0, 1.0};
        report.step_delta = 1.0;
    } else {
        double step_delta = config.step_delta;
        std::optional<double> measured_k;
        if (step_delta <= 0.0) {
            Stage0Solver probe_solver(problem, monot_c);
            const double k_hat =
                measure_contraction_k(problem, 0.0, AuxiliaryForcing::zero(problem, 0.0, 0.0),
                                      config.k_probes, config.seed, monot_c, probe_solver);
            measured_k = k_hat;
            step_delta = suggested_step_delta(k_hat, config.min_step_delta);
        }
        try {
            std::tie(lam, report) = solve_staged(problem, config, step_delta, measured_k);
        } catch (const SolverError&) {
            // One automatic retry with a halved continuation step.
            std::tie(lam, report) = solve_staged(problem, config, 0.5 * step_delta, measured_k);
            report.retried_with_halved_step = true;
        }
    }

    report.final_residual = hamiltonian_system_residual(problem, lam);
    if (!(report.final_residual < 1e-8))
        throw SolverError("solve_hamiltonian_system: final recursion residual " +
                          std::to_string(report.final_residual) + " exceeds 1e-8");
    return {lam, std::move(report)};
}

double hamiltonian_system_residual(const ControlProblem& problem, const TripleProcess& lam) {
    const auto& lat = *problem.lattice;
    const int N = problem.steps();
    const double dt = problem.dt();
    const double sdt = lat.sqrt_dt();

    double sup = 0.0;
    // Boundary couplings.
    sup = std::max(sup,
                   (lam.k.at(0, 0) + problem.integrand.grad_h(lam.y.at(0, 0))).cwiseAbs().maxCoeff());
    for (int j = 0; j < lat.node_count(N); ++j) {
        sup = std::max(sup,
                       (lam.y.at(N, j) - problem.coeffs.xi(problem.w(N, j))).cwiseAbs().maxCoeff());
    }

    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            const double w = problem.w(i, j);
            const Vec y = lam.y.at(i, j);
            const Vec z = lam.z.at(i, j);
            const Vec k = lam.k.at(i, j);
            const Vec u = problem.minimizer.gamma(i, w, problem.cache->adjoint_d(i, j) * k);

            // Backward recursion with the coupled control.
            Vec ry = y + dt * (problem.cache->a(i, j) * y) - expect_next(lam.y, i, j) +
                     dt * (problem.cache->b(i, j) * z + problem.cache->d(i, j) * u +
                           problem.cache->g(i, j));
            sup = std::max(sup, ry.cwiseAbs().maxCoeff());

            // Martingale extraction.
            if (!lat.is_chain()) {
                const Vec up_v = lam.y.at(i + 1, lat.child(i, j, 0));
                const Vec dn_v = lam.y.at(i + 1, lat.child(i, j, 1));
                sup = std::max(sup,
                               (z - (up_v - dn_v) / (2.0 * sdt)).cwiseAbs().maxCoeff());
            } else {
                sup = std::max(sup, z.cwiseAbs().maxCoeff());
            }

            // Forward recursion with loads along the solution.
            const Vec drift = problem.integrand.grad_l_y(i, w, y, z, u);
            const Vec diffusion =
                problem.cache->adjoint_b(i, j) * k + problem.integrand.grad_l_z(i, w, y, z, u);
            const int branches = lat.is_chain() ? 1 : 2;
            for (int br = 0; br < branches; ++br) {
                const double dw = lat.is_chain() ? 0.0 : (br == 0 ? sdt : -sdt);
                const Vec kc = lam.k.at(i + 1, lat.child(i, j, br));
                Vec rk = kc + dt * (problem.cache->adjoint_a(i, j) * kc) - k + dt * drift +
                         dw * diffusion;
                sup = std::max(sup, rk.cwiseAbs().maxCoeff());
            }
        }
    }
    return sup;
}

double duality_residual(const TripleProcess& lam1, const TripleProcess& lam2,
                        const ControlProblem& problem, const AdaptedProcess* u1,
                        const AdaptedProcess* u2) {
    require(lam1.k.same_lattice(lam2.k), "duality_residual: triples on different lattices");
    require(lam1.k.same_lattice_as(*problem.lattice), "duality_residual: lattice mismatch");
    const auto& lat = *problem.lattice;
    const int N = problem.steps();
    const double dt = problem.dt();
    const double sdt = lat.sqrt_dt();
    const auto& triple = problem.triple;

    auto control_at = [&](const TripleProcess& lam, const AdaptedProcess* u, int i, int j) -> Vec {
        if (u) return u->at(i, j);
        return problem.minimizer.gamma(i, problem.w(i, j),
                                       problem.cache->adjoint_d(i, j) * lam.k.at(i, j));
    };

    // Telescoped boundary term.
    auto pair_at = [&](int i, int j) {
        const Vec dk = lam1.k.at(i, j) - lam2.k.at(i, j);
        const Vec dy = lam1.y.at(i, j) - lam2.y.at(i, j);
        return inner_h(dk, dy, triple);
    };
    double m_terminal = 0.0;
    for (int j = 0; j < lat.node_count(N); ++j) m_terminal += lat.node_prob(N) * pair_at(N, j);
    const double m_initial = pair_at(0, 0);

    // Per-level cross terms prescribed by the two recursions.
    double cross = 0.0;
    for (int i = 0; i < N; ++i) {
        const double p = lat.node_prob(i);
        double level_sum = 0.0;
        for (int j = 0; j < lat.node_count(i); ++j) {
            const double w = problem.w(i, j);
            const Mat& A = problem.cache->a(i, j);
            const Mat& B = problem.cache->b(i, j);
            const Mat& D = problem.cache->d(i, j);
            const Mat& Bs = problem.cache->adjoint_b(i, j);

            const Vec dy = lam1.y.at(i, j) - lam2.y.at(i, j);
            const Vec dz = lam1.z.at(i, j) - lam2.z.at(i, j);
            const Vec dk = lam1.k.at(i, j) - lam2.k.at(i, j);

            const Vec ua = control_at(lam1, u1, i, j);
            const Vec ub = control_at(lam2, u2, i, j);

            // Differenced y-drift load (G cancels) and k-equation loads.
            const Vec dwload = B * dz + D * (ua - ub);
            const Vec ddl =
                problem.integrand.grad_l_y(i, w, lam1.y.at(i, j), lam1.z.at(i, j), ua) -
                problem.integrand.grad_l_y(i, w, lam2.y.at(i, j), lam2.z.at(i, j), ub);
            const Vec dgl =
                problem.integrand.grad_l_z(i, w, lam1.y.at(i, j), lam1.z.at(i, j), ua) -
                problem.integrand.grad_l_z(i, w, lam2.y.at(i, j), lam2.z.at(i, j), ub);

            // Post-drift value of the differenced backward step.
            const Vec dy_hat = dy + dt * (A * dy + dwload);

            // Child mean and martingale part of the differenced forward step.
            Vec dk_mean, dk_mart;
            if (lat.is_chain()) {
                dk_mean = lam1.k.at(i + 1, 0) - lam2.k.at(i + 1, 0);
                dk_mart = Vec::Zero(problem.dim());
            } else {
                const Vec up_d = lam1.k.at(i + 1, lat.child(i, j, 0)) -
                                 lam2.k.at(i + 1, lat.child(i, j, 0));
                const Vec dn_d = lam1.k.at(i + 1, lat.child(i, j, 1)) -
                                 lam2.k.at(i + 1, lat.child(i, j, 1));
                dk_mean = 0.5 * (up_d + dn_d);
                dk_mart = (up_d - dn_d) / (2.0 * sdt);
            }

            level_sum += dt * (inner_h(dk, A * dy + dwload, triple) -
                               inner_h(ddl, dy_hat, triple) -
                               inner_h(Bs * dk + dgl, dz, triple) -
                               inner_h(dk_mean, A * dy_hat, triple) -
                               dt * inner_h(dk_mart, A * dz, triple));
        }
        cross += p * level_sum;
    }

    return std::abs(m_terminal - m_initial - cross);
}

} // namespace fbsee
