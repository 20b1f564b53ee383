#include "fbsee/lattice.hpp"

#include "fbsee/gelfand.hpp"

#include <bit>
#include <cmath>

namespace fbsee {

TimeGrid::TimeGrid(double T, int N) : horizon_t(T), steps(N), dt(T / N) {
    require(T > 0.0 && std::isfinite(T), "TimeGrid: horizon must be positive and finite");
    require(N > 0, "TimeGrid: steps must be positive");
    require(std::abs(dt * N - T) <= 1e-14 * T, "TimeGrid: dt * steps must reproduce the horizon");
}

BrownianLattice::BrownianLattice(TimeGrid grid, Mode mode, int tree_cap)
    : grid_(grid), mode_(mode), sqrt_dt_(std::sqrt(grid.dt)) {
    if (mode_ == Mode::Tree) {
        require(grid_.steps <= tree_cap,
                "BrownianLattice: tree mode refuses steps > " + std::to_string(tree_cap) +
                    " (got " + std::to_string(grid_.steps) + ")");
    }
}

double BrownianLattice::w_value(int level, int node) const {
    if (mode_ == Mode::Chain) return 0.0;
    // bit 0 of the path word = up move; #up - #down = level - 2 popcount.
    const int downs = std::popcount(static_cast<unsigned>(node));
    return sqrt_dt_ * (level - 2 * downs);
}

BrownianLattice make_tree_lattice(TimeGrid grid, int tree_cap) {
    return BrownianLattice(grid, BrownianLattice::Mode::Tree, tree_cap);
}

BrownianLattice make_deterministic_lattice(TimeGrid grid) {
    return BrownianLattice(grid, BrownianLattice::Mode::Chain);
}

AdaptedProcess::AdaptedProcess(std::shared_ptr<const BrownianLattice> lattice, int dim,
                               int last_level)
    : lattice_(std::move(lattice)), dim_(dim) {
    require(static_cast<bool>(lattice_), "AdaptedProcess: null lattice");
    require(dim > 0, "AdaptedProcess: dimension must be positive");
    require(last_level >= 0 && last_level < lattice_->levels(),
            "AdaptedProcess: last level outside the lattice");
    levels_.reserve(last_level + 1);
    for (int i = 0; i <= last_level; ++i)
        levels_.push_back(Mat::Zero(dim, lattice_->node_count(i)));
}

AdaptedProcess& AdaptedProcess::operator+=(const AdaptedProcess& o) {
    require(same_lattice(o) && last_level() == o.last_level() && dim_ == o.dim_,
            "AdaptedProcess: mismatched operands");
    for (size_t i = 0; i < levels_.size(); ++i) levels_[i] += o.levels_[i];
    return *this;
}

AdaptedProcess& AdaptedProcess::operator-=(const AdaptedProcess& o) {
    require(same_lattice(o) && last_level() == o.last_level() && dim_ == o.dim_,
            "AdaptedProcess: mismatched operands");
    for (size_t i = 0; i < levels_.size(); ++i) levels_[i] -= o.levels_[i];
    return *this;
}

AdaptedProcess& AdaptedProcess::operator*=(double s) {
    for (auto& m : levels_) m *= s;
    return *this;
}

double AdaptedProcess::sup_distance(const AdaptedProcess& o) const {
    require(same_lattice(o) && last_level() == o.last_level() && dim_ == o.dim_,
            "AdaptedProcess: mismatched operands");
    double sup = 0.0;
    for (size_t i = 0; i < levels_.size(); ++i)
        sup = std::max(sup, (levels_[i] - o.levels_[i]).cwiseAbs().maxCoeff());
    return sup;
}

Vec expect_next(const AdaptedProcess& proc, int level, int node) {
    require(level + 1 <= proc.last_level(), "expect_next: node is at the last covered level");
    const auto& lat = proc.lattice();
    if (lat.is_chain()) return proc.at(level + 1, 0);
    return 0.5 * (proc.at(level + 1, lat.child(level, node, 0)) +
                  proc.at(level + 1, lat.child(level, node, 1)));
}

Vec extract_martingale(const AdaptedProcess& proc_next_level, int level, int node, double dt) {
    require(dt > 0.0, "extract_martingale: dt must be positive");
    require(level + 1 <= proc_next_level.last_level(),
            "extract_martingale: node is at the last covered level");
    const auto& lat = proc_next_level.lattice();
    if (lat.is_chain()) return Vec::Zero(proc_next_level.dim());
    const Vec up = proc_next_level.at(level + 1, lat.child(level, node, 0));
    const Vec down = proc_next_level.at(level + 1, lat.child(level, node, 1));
    return (up - down) / (2.0 * std::sqrt(dt));
}

double expectation(const AdaptedProcess& proc, int level,
                   const std::function<double(Eigen::Ref<const Vec>)>& f) {
    require(level >= 0 && level <= proc.last_level(), "expectation: level not covered");
    const auto& lat = proc.lattice();
    const double p = lat.node_prob(level);
    double sum = 0.0;
    // Fixed summation order (node 0 upward) so repeated runs agree bitwise.
    for (int j = 0; j < lat.node_count(level); ++j) sum += p * f(proc.at(level, j));
    return sum;
}

TripleProcess::TripleProcess(AdaptedProcess k_, AdaptedProcess y_, AdaptedProcess z_)
    : k(std::move(k_)), y(std::move(y_)), z(std::move(z_)) {
    require(k.same_lattice(y) && y.same_lattice(z), "TripleProcess: components on different lattices");
    const int n_levels = k.lattice().grid().steps;
    require(k.last_level() == n_levels && y.last_level() == n_levels,
            "TripleProcess: k and y must cover levels 0..N");
    require(z.last_level() == n_levels - 1, "TripleProcess: z must cover levels 0..N-1");
}

TripleProcess TripleProcess::zero(std::shared_ptr<const BrownianLattice> lattice, int n) {
    const int N = lattice->grid().steps;
    return TripleProcess(AdaptedProcess(lattice, n, N), AdaptedProcess(lattice, n, N),
                         AdaptedProcess(lattice, n, N - 1));
}

TripleProcess& TripleProcess::operator+=(const TripleProcess& o) {
    k += o.k;
    y += o.y;
    z += o.z;
    return *this;
}

TripleProcess& TripleProcess::operator-=(const TripleProcess& o) {
    k -= o.k;
    y -= o.y;
    z -= o.z;
    return *this;
}

TripleProcess& TripleProcess::operator*=(double s) {
    k *= s;
    y *= s;
    z *= s;
    return *this;
}

double m2_norm_sq(const TripleProcess& lam, const GelfandTriple& triple) {
    require(lam.k.dim() == triple.dim && lam.y.dim() == triple.dim && lam.z.dim() == triple.dim,
            "m2_norm_sq: dimension mismatch with the triple");
    const auto& lat = lam.k.lattice();
    const double dt = lat.grid().dt;
    double total = 0.0;
    for (int i = 0; i < lat.grid().steps; ++i) {
        const double p = lat.node_prob(i);
        double level_sum = 0.0;
        for (int j = 0; j < lat.node_count(i); ++j) {
            level_sum += norm_v_sq(lam.k.at(i, j), triple);
            level_sum += norm_v_sq(lam.y.at(i, j), triple);
            level_sum += norm_h_sq(lam.z.at(i, j), triple);
        }
        total += dt * p * level_sum;
    }
    return total;
}

double m2_norm(const TripleProcess& lam, const GelfandTriple& triple) {
    return std::sqrt(std::max(0.0, m2_norm_sq(lam, triple)));
}

double m2_distance(const TripleProcess& a, const TripleProcess& b, const GelfandTriple& triple) {
    TripleProcess d = a;
    d -= b;
    return m2_norm(d, triple);
}

} // namespace fbsee
