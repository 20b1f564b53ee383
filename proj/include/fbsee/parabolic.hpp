#pragma once

#include "fbsee/problem.hpp"

#include <functional>

namespace fbsee {

/// Dirichlet problem data on the unit interval (0,1) or square (0,1)^2:
///   dy = { -d_i(a^ij d_j y) - b^i d_i y - c y + nu z + g + u } dt + z dW,
///   y(T, x) = xi(x),    y = 0 on the boundary,
/// with the unit quadratic cost (M = Q = N = h = identity).
/// Coefficients are functions of (t, W_t, x); spatial points are passed
/// with both coordinates (x2 = 0 in one dimension).
struct ParabolicProblem {
    int space_dim = 1;
    int mesh_n = 8; // interior points per axis

    using ScalarField = std::function<double(double, double, double, double)>; // (t, W, x1, x2)

    std::function<Mat(double, double, double, double)> a; // d x d symmetric diffusion
    ScalarField b1;                                       // drift components
    ScalarField b2;                                       // ignored in 1-D
    ScalarField c;
    ScalarField nu;                                       // z-coefficient
    ScalarField g;
    std::function<double(double, double, double)> xi;     // (W_T, x1, x2)

    double kappa = 0.0; // lower super-parabolicity bound: kappa I <= 2a
    double big_k = 0.0; // upper bound: 2a <= K I, and |b|,|c|,|nu|,|g| <= K

    bool coefficients_time_dependent = false;
    bool coefficients_node_dependent = false;

    static ParabolicProblem heat_unit(int mesh_n, double diffusion = 0.5);
};

/// Validates super-parabolicity and boundedness on sampled points; the
/// result is also stored in the assembled problem's metadata.
CheckResult check_super_parabolicity(const ParabolicProblem& problem, const TimeGrid& grid,
                                     const BrownianLattice& lattice, int samples_per_axis = 9);

/// Centered second-order finite-difference assembly with Dirichlet
/// elimination:
///   A(t) = -[d_i(a^ij d_j .) + b^i d_i . + c .]       (V -> V*)
///   B(t) = multiplication by nu, D = identity on mesh values, G(t) = g,
///   massH = h^d I, normV = massH + stiffness (discrete H^1_0),
/// with the unit quadratic integrand. A* is the exact discrete adjoint
/// massH^-1 A^T massH, which discretizes
///   -d_i(a^ij d_j .) + b^i d_i . - (c - d_i b^i) .
/// Throws ValidationError with a witness on a super-parabolicity breach.
ControlProblem assemble_parabolic(const ParabolicProblem& problem, const TimeGrid& grid,
                                  BrownianLattice::Mode mode);

/// Unit-coefficient stiffness matrix (1/h) tridiag(-1, 2, -1) in 1-D and
/// its Kronecker analog in 2-D, for the discrete H^1_0 norm.
Mat dirichlet_stiffness(int mesh_n, int space_dim, double h);

/// Max over test functions and (t, node) of the integrated-identity
/// residual: the recursion paired against random hat-function combinations
/// vanishing on the boundary, normalized per unit time. Below 1e-8 for
/// solver output.
double weak_solution_residual(const ControlProblem& problem, const AdaptedProcess& y,
                              const AdaptedProcess& z, const AdaptedProcess& u,
                              int test_fns, std::uint64_t seed = 2024);

/// Separation-of-variables reference for the uncontrolled configuration
/// a = 1/2, b = c = nu = g = 0, xi = sin(pi x):
///   y(0, x) = exp(-pi^2 T / 2) sin(pi x) on the mesh.
Vec heat_decay_reference(int mesh_n, double horizon_t);

} // namespace fbsee
