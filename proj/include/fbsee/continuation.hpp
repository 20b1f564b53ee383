#pragma once

#include "fbsee/evolution.hpp"
#include "fbsee/problem.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <vector>

namespace fbsee {

/// Forcings of the auxiliary system at homotopy level rho:
///   dk = -[A* k + rho l_y + (1-rho) C y + b0] dt
///        -[B* k + rho l_z + (1-rho) C z + g0] dW,
///   dy =  [A y + B z + rho D gamma(D* k) + G + f0] dt + z dW,
///   k(0) = -h_y(y(0)), y(T) = xi.
struct AuxiliaryForcing {
    AdaptedProcess b0; // drift load of the k-equation (n-vector)
    AdaptedProcess g0; // diffusion load of the k-equation
    AdaptedProcess f0; // drift load of the y-equation
    double rho = 0.0;
    double rho0 = 0.0;

    static AuxiliaryForcing zero(const ControlProblem& problem, double rho, double rho0);
};

struct ContinuationConfig {
    double monot_c = -1.0;        // < 0: take the integrand's monotonicity_c
    double step_delta = -1.0;     // <= 0: measure K and use min(1/(2K), 1)
    double picard_tol = 1e-9;
    int max_picard = 200;
    bool measure_k = true;
    int k_probes = 6;
    std::uint64_t seed = 12345;
    bool flat = false;            // opt-in accelerator, see solve_hamiltonian_system
    double min_step_delta = 0.05; // clamp for the measured default
};

struct StageRecord {
    double rho = 0.0;
    double rho0 = 0.0;
    int picard_iterations = 0;
    std::vector<double> increments;         // Picard increment norms
    std::vector<double> contraction_ratios; // probe-pair ratios at this stage
};

struct ContinuationReport {
    std::vector<double> rho_schedule;
    std::vector<StageRecord> stages;
    double final_residual = 0.0;
    double duality_residual = 0.0;
    std::optional<double> measured_k;
    double step_delta = 0.0;
    bool retried_with_halved_step = false;
};

/// Abstract solver of the auxiliary system at a fixed rho level for
/// arbitrary forcings. Stage m wraps stage m-1; stage 0 is the decoupled
/// direct solve.
class StageSolver {
public:
    virtual ~StageSolver() = default;
    virtual TripleProcess solve(const AuxiliaryForcing& forcing) = 0;
    virtual double rho() const = 0;

    /// Most recent converged solution, used as the next warm start.
    const std::optional<TripleProcess>& last_solution() const { return last_; }
    void seed_warm_start(TripleProcess lam) { last_ = std::move(lam); }

protected:
    std::optional<TripleProcess> last_;
};

/// Direct solver of the rho = 0 system: the y-equation has no control
/// term and decouples, then the k-equation is a linear forward solve with
/// loads C y + b0 and C z + g0.
class Stage0Solver : public StageSolver {
public:
    Stage0Solver(const ControlProblem& problem, double monot_c);
    TripleProcess solve(const AuxiliaryForcing& forcing) override;
    double rho() const override { return 0.0; }

private:
    const ControlProblem* problem_;
    double monot_c_;
};

/// One application of the frozen-coefficient map: folds the
/// (rho - rho0)-weighted terms evaluated along lam_prime into the
/// forcings and hands the result to the solver at level rho0:
///   b0' = b0 + (rho - rho0)(l_y(., y', z', u') - C y'),
///   g0' = g0 + (rho - rho0)(l_z(., y', z', u') - C z'),
///   f0' = f0 + (rho - rho0) D gamma(D* k'),
/// with u' = gamma(D* k') along the frozen iterate.
TripleProcess apply_map_i(const TripleProcess& lam_prime, double rho, double rho0,
                          const AuxiliaryForcing& forcing, const ControlProblem& problem,
                          double monot_c, StageSolver& solver_at_rho0);

/// Picard iteration of the frozen map from warm_start until the M^2 norm
/// of the increment drops below picard_tol. Throws SolverError with the
/// last increment and ratio on non-convergence.
TripleProcess solve_stage(double rho, double rho0, const AuxiliaryForcing& forcing,
                          const ControlProblem& problem, const ContinuationConfig& config,
                          StageSolver& solver_at_rho0, const TripleProcess& warm_start,
                          StageRecord* record = nullptr);

/// Full solve of the coupled system by continuation in rho: stage 0 is the
/// decoupled solve, stages m = 1..M with rho_m = min(m delta, 1) are Picard
/// fixed points of the frozen map, each stage's solver calling the previous
/// stage's solver with folded forcings. On stage failure the step is halved
/// once and the whole schedule re-run.
std::pair<TripleProcess, ContinuationReport>
solve_hamiltonian_system(const ControlProblem& problem, const ContinuationConfig& config = {});

/// Sup-node residual of the two coupled recursions at lam with
/// u = gamma(D* k), re-evaluated independently of the solver path.
double hamiltonian_system_residual(const ControlProblem& problem, const TripleProcess& lam);

/// Discrete summation-by-parts identity for E[(k1-k2, y1-y2)_H]:
/// the telescoped level increments minus the drift/diffusion cross terms
/// prescribed by the recursions the two triples satisfy. Zero to round-off
/// for any pair of recursion-consistent triples; O(1) for garbage.
/// u1/u2 are the controls each triple was solved under; when absent they
/// default to gamma(D* k_i) (coupled-system solutions).
double duality_residual(const TripleProcess& lam1, const TripleProcess& lam2,
                        const ControlProblem& problem,
                        const AdaptedProcess* u1 = nullptr,
                        const AdaptedProcess* u2 = nullptr);

/// Empirical contraction constant of the frozen map at rho0: max over
/// probe pairs of |I L1' - I L2'|^2 / (|rho - rho0| |L1' - L2'|^2), probed
/// at the full step rho = min(rho0 + 1, 1). Suggested step is
/// min(1/(2K), 1).
double measure_contraction_k(const ControlProblem& problem, double rho0,
                             const AuxiliaryForcing& forcing, int probes, std::uint64_t seed,
                             double monot_c, StageSolver& solver_at_rho0,
                             std::vector<double>* ratios = nullptr);

double suggested_step_delta(double measured_k, double min_clamp = 0.05);

/// First-power ratios |I L1' - I L2'| / |L1' - L2'| of the frozen map at
/// step rho = rho0 + delta, over probe pairs around the base solution.
/// These are the quantities that must sit below one for the fixed point
/// to contract at the chosen step.
std::vector<double> contraction_ratios_at(const ControlProblem& problem, double rho0, double delta,
                                          const AuxiliaryForcing& forcing, int pairs,
                                          std::uint64_t seed, double monot_c,
                                          StageSolver& solver_at_rho0);

} // namespace fbsee
