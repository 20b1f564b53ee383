#pragma once

#include "fbsee/types.hpp"

#include <functional>
#include <memory>
#include <vector>

namespace fbsee {

struct GelfandTriple;

/// Uniform grid on [0, T] with N steps.
struct TimeGrid {
    double horizon_t = 1.0;
    int steps = 1;
    double dt = 1.0;

    TimeGrid() = default;
    TimeGrid(double T, int N);

    double time(int i) const { return dt * i; }
};

/// Event lattice for a one-dimensional Brownian driver.
///
/// Two modes:
///  - Tree: exact binary tree, level i holds 2^i nodes, each step moves
///    W by +-sqrt(dt) with probability 1/2. Conditional expectations and
///    martingale extraction are exact, at cost 2^N.
///  - Chain: one node per level with W identically 0, for problems whose
///    data are deterministic (single path of probability one). Enables
///    fine time grids.
///
/// Node indexing at level i: j in [0, 2^i). Children of (i, j) are
/// (i+1, 2j) for the up move and (i+1, 2j+1) for the down move, so the
/// bit pattern of j is the path history (0 = up).
class BrownianLattice {
public:
    enum class Mode { Tree, Chain };

    static constexpr int kDefaultTreeCap = 16;

    BrownianLattice(TimeGrid grid, Mode mode, int tree_cap = kDefaultTreeCap);

    const TimeGrid& grid() const { return grid_; }
    Mode mode() const { return mode_; }
    bool is_chain() const { return mode_ == Mode::Chain; }
    int levels() const { return grid_.steps + 1; } // levels 0..N

    int node_count(int level) const {
        return mode_ == Mode::Chain ? 1 : (1 << level);
    }
    int child(int /*level*/, int node, int branch) const {
        return mode_ == Mode::Chain ? 0 : 2 * node + branch;
    }
    int parent(int /*level*/, int node) const {
        return mode_ == Mode::Chain ? 0 : node / 2;
    }

    /// W value at a node: sqrt(dt) * (#up - #down) along the path.
    double w_value(int level, int node) const;

    /// Probability of a node at a level (2^-level on the tree, 1 on the chain).
    double node_prob(int level) const {
        return mode_ == Mode::Chain ? 1.0 : std::pow(0.5, level);
    }

    double sqrt_dt() const { return sqrt_dt_; }

private:
    TimeGrid grid_;
    Mode mode_;
    double sqrt_dt_;
};

BrownianLattice make_tree_lattice(TimeGrid grid, int tree_cap = BrownianLattice::kDefaultTreeCap);
BrownianLattice make_deterministic_lattice(TimeGrid grid);

/// Vector-valued process indexed by lattice nodes. Adaptedness is
/// structural: the value attached to a node is a function of that node's
/// Brownian history. Values at level i are the columns of a d x 2^i matrix.
class AdaptedProcess {
public:
    AdaptedProcess() = default;

    /// Allocates levels 0..last_level inclusive, zero-initialized.
    AdaptedProcess(std::shared_ptr<const BrownianLattice> lattice, int dim, int last_level);

    static AdaptedProcess zero(std::shared_ptr<const BrownianLattice> lattice, int dim, int last_level) {
        return AdaptedProcess(std::move(lattice), dim, last_level);
    }

    const BrownianLattice& lattice() const { return *lattice_; }
    std::shared_ptr<const BrownianLattice> lattice_ptr() const { return lattice_; }
    int dim() const { return dim_; }
    int last_level() const { return static_cast<int>(levels_.size()) - 1; }

    Eigen::Ref<Vec> at(int level, int node) { return levels_[level].col(node); }
    Eigen::Ref<const Vec> at(int level, int node) const { return levels_[level].col(node); }

    Mat& level(int i) { return levels_[i]; }
    const Mat& level(int i) const { return levels_[i]; }

    bool same_lattice(const AdaptedProcess& other) const { return lattice_ == other.lattice_; }
    bool same_lattice_as(const BrownianLattice& l) const { return lattice_.get() == &l; }

    AdaptedProcess& operator+=(const AdaptedProcess& o);
    AdaptedProcess& operator-=(const AdaptedProcess& o);
    AdaptedProcess& operator*=(double s);
    friend AdaptedProcess operator+(AdaptedProcess a, const AdaptedProcess& b) { return a += b; }
    friend AdaptedProcess operator-(AdaptedProcess a, const AdaptedProcess& b) { return a -= b; }
    friend AdaptedProcess operator*(double s, AdaptedProcess a) { return a *= s; }

    /// Sup over nodes of the max-abs entry difference.
    double sup_distance(const AdaptedProcess& o) const;

private:
    std::shared_ptr<const BrownianLattice> lattice_;
    int dim_ = 0;
    std::vector<Mat> levels_;
};

/// Conditional expectation one step ahead: mean of the two children
/// (identity on the chain).
Vec expect_next(const AdaptedProcess& proc, int level, int node);

/// Martingale-representation integrand of the next-level values:
/// (up - down) / (2 sqrt(dt)). Exact for any level-(i+1) variable affine
/// in the Brownian increment. Zero on the chain.
Vec extract_martingale(const AdaptedProcess& proc_next_level, int level, int node, double dt);

/// E[f(value at level i)] with the exact node probabilities.
double expectation(const AdaptedProcess& proc, int level,
                   const std::function<double(Eigen::Ref<const Vec>)>& f);

/// The triple (k, y, z): forward adjoint, backward state, martingale
/// integrand. k and y live on levels 0..N, z on 0..N-1.
struct TripleProcess {
    AdaptedProcess k;
    AdaptedProcess y;
    AdaptedProcess z;

    TripleProcess() = default;
    TripleProcess(AdaptedProcess k_, AdaptedProcess y_, AdaptedProcess z_);

    static TripleProcess zero(std::shared_ptr<const BrownianLattice> lattice, int n);

    TripleProcess& operator+=(const TripleProcess& o);
    TripleProcess& operator-=(const TripleProcess& o);
    TripleProcess& operator*=(double s);
    friend TripleProcess operator-(TripleProcess a, const TripleProcess& b) { return a -= b; }
    friend TripleProcess operator+(TripleProcess a, const TripleProcess& b) { return a += b; }
};

/// Squared norm E[ sum_i dt (|k_i|_V^2 + |y_i|_V^2 + |z_i|_H^2) ] with the
/// left-endpoint rule over levels 0..N-1.
double m2_norm_sq(const TripleProcess& lam, const GelfandTriple& triple);

double m2_norm(const TripleProcess& lam, const GelfandTriple& triple);

double m2_distance(const TripleProcess& a, const TripleProcess& b, const GelfandTriple& triple);

} // namespace fbsee
