#include "fbsee/problem.hpp"

namespace fbsee {

OperatorCache::OperatorCache(const EvolutionCoefficients* coeffs, const BrownianLattice* lattice)
    : coeffs_(coeffs), lattice_(lattice) {}

std::uint64_t OperatorCache::key(int level, int node) const {
    // W varies with the level as well, so node-dependence implies
    // level-dependence of the cache key.
    const bool nd = coeffs_->node_dependent;
    const bool td = coeffs_->time_dependent || nd;
    const std::uint64_t l = td ? static_cast<std::uint64_t>(level) : 0u;
    const std::uint64_t n = nd ? static_cast<std::uint64_t>(node) : 0u;
    return (l << 32) | n;
}

OperatorCache::Entry& OperatorCache::entry(int level, int node) const {
    const std::uint64_t k = key(level, node);
    auto it = entries_.find(k);
    if (it != entries_.end()) return it->second;

    const bool nd = coeffs_->node_dependent;
    const int l = (coeffs_->time_dependent || nd) ? level : 0;
    const int j = nd ? node : 0;
    const double w = lattice_->w_value(l, j);
    Entry e;
    e.a = coeffs_->a(l, w);
    e.b = coeffs_->b(l, w);
    e.d = coeffs_->d(l, w);
    e.g = coeffs_->g(l, w);
    e.adj_a = coeffs_->adjoint_a(l, w);
    e.adj_b = coeffs_->adjoint_b(l, w);
    e.adj_d = coeffs_->adjoint_d(l, w);
    return entries_.emplace(k, std::move(e)).first->second;
}

const Mat& OperatorCache::a(int level, int node) const { return entry(level, node).a; }
const Mat& OperatorCache::b(int level, int node) const { return entry(level, node).b; }
const Mat& OperatorCache::d(int level, int node) const { return entry(level, node).d; }
const Vec& OperatorCache::g(int level, int node) const { return entry(level, node).g; }
const Mat& OperatorCache::adjoint_a(int level, int node) const { return entry(level, node).adj_a; }
const Mat& OperatorCache::adjoint_b(int level, int node) const { return entry(level, node).adj_b; }
const Mat& OperatorCache::adjoint_d(int level, int node) const { return entry(level, node).adj_d; }

Vec OperatorCache::solve_forward_step(int level, int node, const Vec& rhs) const {
    Entry& e = entry(level, node);
    if (!e.lu_forward) {
        const double dt = lattice_->grid().dt;
        Mat step = Mat::Identity(e.a.rows(), e.a.cols()) + dt * e.a;
        Eigen::PartialPivLU<Mat> lu(step);
        // PartialPivLU has no rank query; a zero pivot shows up as non-finite
        // solve output, checked by the caller via the reported residual.
        e.lu_forward.emplace(std::move(lu));
    }
    Vec x = e.lu_forward->solve(rhs);
    if (!x.allFinite())
        throw SolverError("singular (I + dt A) step at time index " + std::to_string(level));
    return x;
}

Vec OperatorCache::solve_adjoint_step(int level, int node, const Vec& rhs) const {
    Entry& e = entry(level, node);
    if (!e.lu_adjoint) {
        const double dt = lattice_->grid().dt;
        Mat step = Mat::Identity(e.adj_a.rows(), e.adj_a.cols()) + dt * e.adj_a;
        e.lu_adjoint.emplace(Eigen::PartialPivLU<Mat>(step));
    }
    Vec x = e.lu_adjoint->solve(rhs);
    if (!x.allFinite())
        throw SolverError("singular (I + dt A*) step at time index " + std::to_string(level));
    return x;
}

void OperatorCache::clear() { entries_.clear(); }

AdaptedProcess ControlProblem::terminal_data() const {
    const int N = steps();
    AdaptedProcess xi(lattice, dim(), N);
    // Only the terminal level is meaningful; lower levels stay zero.
    for (int j = 0; j < lattice->node_count(N); ++j) xi.at(N, j) = coeffs.xi(w(N, j));
    return xi;
}

AdaptedProcess ControlProblem::optimal_control_from(const AdaptedProcess& k) const {
    const int N = steps();
    AdaptedProcess u(lattice, control_dim, N - 1);
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lattice->node_count(i); ++j) {
            const double wv = w(i, j);
            u.at(i, j) = minimizer.gamma(i, wv, cache->adjoint_d(i, j) * k.at(i, j));
        }
    }
    return u;
}

void ControlProblem::finalize() {
    require(static_cast<bool>(lattice), "ControlProblem: missing lattice");
    require(triple.dim == coeffs.dim, "ControlProblem: triple/coefficients dimension mismatch");
    require(control_dim == coeffs.control_dim, "ControlProblem: control dimension mismatch");
    if (mass_u.size() == 0) mass_u = Mat::Identity(control_dim, control_dim);
    if (!coeffs.has_adjoints()) coeffs = build_adjoints(std::move(coeffs), triple, mass_u);
    cache = std::make_shared<OperatorCache>(&coeffs, lattice.get());
}

} // namespace fbsee
