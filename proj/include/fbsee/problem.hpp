#pragma once

#include "fbsee/gelfand.hpp"
#include "fbsee/hamiltonian.hpp"
#include "fbsee/lattice.hpp"
#include "fbsee/types.hpp"

#include <memory>
#include <optional>
#include <unordered_map>
#include <vector>

namespace fbsee {

/// Concrete operator data of the linear-quadratic integrand instance
/// l = (M y, y)_H + (Q z, z)_H + (N u, u)_U, h(y) = (h y, y)_H.
/// Kept alongside the generic callbacks so that the dense oracle and the
/// minimizer map can use the operators directly.
struct LqIntegrandSpec {
    std::function<Mat(int, double)> m;
    std::function<Mat(int, double)> q;
    std::function<Mat(int, double)> n;
    Mat h;
    // Optional smooth convex perturbation c * sum_i log(1 + y_i^2) added to l.
    double log_perturbation = 0.0;
};

/// Extra validation data recorded by the parabolic front-end.
struct ParabolicMeta {
    int space_dim = 1;
    int mesh_n = 0;
    double h = 0.0;
    double kappa = 0.0;
    double big_k = 0.0;
    CheckResult super_parabolicity; // filled at assembly
    std::vector<double> mesh_x;     // interior coordinates, axis-major for 2-D
};

/// Per-(level, node) cache of step matrices and factorizations. Keys
/// collapse along the time or node axis when the coefficient family
/// declares itself independent of them.
class OperatorCache {
public:
    OperatorCache() = default;
    OperatorCache(const EvolutionCoefficients* coeffs, const BrownianLattice* lattice);

    const Mat& a(int level, int node) const;
    const Mat& b(int level, int node) const;
    const Mat& d(int level, int node) const;
    const Vec& g(int level, int node) const;
    const Mat& adjoint_a(int level, int node) const;
    const Mat& adjoint_b(int level, int node) const;
    const Mat& adjoint_d(int level, int node) const;

    /// Solves (I + dt A(level, node)) x = rhs.
    Vec solve_forward_step(int level, int node, const Vec& rhs) const;
    /// Solves (I + dt A*(level, node)) x = rhs.
    Vec solve_adjoint_step(int level, int node, const Vec& rhs) const;

    void clear();

private:
    struct Entry {
        Mat a, b, d, adj_a, adj_b, adj_d;
        Vec g;
        std::optional<Eigen::PartialPivLU<Mat>> lu_forward;
        std::optional<Eigen::PartialPivLU<Mat>> lu_adjoint;
    };

    std::uint64_t key(int level, int node) const;
    Entry& entry(int level, int node) const;

    const EvolutionCoefficients* coeffs_ = nullptr;
    const BrownianLattice* lattice_ = nullptr;
    mutable std::unordered_map<std::uint64_t, Entry> entries_;
};

/// Bundle of everything a solve needs: spaces, operator family, integrand,
/// minimizer, lattice and control-space data. Immutable after assembly;
/// operations treat it as read-only.
struct ControlProblem {
    GelfandTriple triple;
    EvolutionCoefficients coeffs;
    IntegrandModel integrand;
    MinimizerMap minimizer;
    std::shared_ptr<const BrownianLattice> lattice;
    int control_dim = 0;
    Mat mass_u; // SPD inner product on U (identity in the abstract case)

    std::optional<LqIntegrandSpec> lq;
    std::optional<ParabolicMeta> parabolic;

    std::shared_ptr<OperatorCache> cache;

    int dim() const { return triple.dim; }
    int steps() const { return lattice->grid().steps; }
    double dt() const { return lattice->grid().dt; }
    double w(int level, int node) const { return lattice->w_value(level, node); }

    /// Evaluates the terminal datum on every terminal node.
    AdaptedProcess terminal_data() const;

    /// u = gamma(D* k) node by node over levels 0..N-1.
    AdaptedProcess optimal_control_from(const AdaptedProcess& k) const;

    double inner_u(const Vec& a, const Vec& b) const { return a.dot(mass_u * b); }
    double norm_u(const Vec& a) const { return std::sqrt(std::max(0.0, inner_u(a, a))); }

    void finalize(); // builds adjoints (if absent) and the cache
};

} // namespace fbsee
