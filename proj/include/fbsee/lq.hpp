#pragma once

#include "fbsee/problem.hpp"

#include <functional>

namespace fbsee {

/// Abstract linear-quadratic problem: matrix coefficient families over
/// R^n with massH = normV = identity and cost
///   l = (M y, y) + (Q z, z) + (N u, u),  h(y) = (h y, y).
struct LqProblemSpec {
    int dim = 1;
    int control_dim = 1;
    double horizon_t = 1.0;
    int steps = 1;
    BrownianLattice::Mode mode = BrownianLattice::Mode::Chain;
    int tree_cap = BrownianLattice::kDefaultTreeCap;

    using MatFn = std::function<Mat(int, double)>;

    MatFn a, b, d, m, q, n;
    std::function<Vec(int, double)> g;
    std::function<Vec(double)> xi;
    Mat h;

    double bound_b = 0.0;
    double bound_d = 0.0;
    bool time_dependent = false;
    bool node_dependent = false;

    /// Smooth convex perturbation c sum_i log(1 + y_i^2); guarded so the
    /// integrand stays convexity-dominated (c <= 4 lambda_min(M)).
    double log_perturbation = 0.0;

    /// All-scalar constant-coefficient instance.
    static LqProblemSpec scalar(double a, double b, double d, double g,
                                double m, double q, double n, double h,
                                std::function<Vec(double)> xi,
                                double horizon_t, int steps, BrownianLattice::Mode mode);
};

/// Builds the full problem: lattice, coefficient family with adjoints,
/// integrand callbacks with gradients and the monotonicity constant
/// (min over samples of 2 lambda_min(M), 2 lambda_min(Q), 2 lambda_min(h),
/// corrected for the log perturbation), and the minimizer map
/// gamma(v) = -1/2 N^-1 v.
ControlProblem make_lq_problem(const LqProblemSpec& spec);

} // namespace fbsee
