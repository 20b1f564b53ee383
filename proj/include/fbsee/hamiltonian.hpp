#pragma once

#include "fbsee/gelfand.hpp"
#include "fbsee/types.hpp"

#include <functional>
#include <string>
#include <vector>

namespace fbsee {

struct ControlProblem;

/// Running cost l(t, y, z, u) and initial-time cost h(y) with their
/// gradients, plus the constants the fixed-point machinery consumes:
/// monotonicity_c (strong-monotonicity constant of the gradients) and
/// growth_c (quadratic growth bound).
///
/// Gradients are taken w.r.t. the H inner product for y and z and the U
/// inner product for u, i.e. l(x + e) - l(x) = (grad, e)_inner + o(e).
struct IntegrandModel {
    using ScalarFn = std::function<double(int, double, const Vec&, const Vec&, const Vec&)>;
    using VecFn = std::function<Vec(int, double, const Vec&, const Vec&, const Vec&)>;

    ScalarFn l;
    VecFn grad_l_y;
    VecFn grad_l_z;
    VecFn grad_l_u;
    std::function<double(const Vec&)> h;
    std::function<Vec(const Vec&)> grad_h;

    double monotonicity_c = 0.0;
    double growth_c = 0.0;
};

/// Pointwise minimizer map u = gamma(D* k) of the Hamiltonian in u.
struct MinimizerMap {
    std::function<Vec(int, double, const Vec&)> gamma; // (i, W, v) -> m-vector
    double lipschitz_c = 0.0;
};

/// H(t, y, z, u, k) = (B z + D u, k)_H + l(t, y, z, u).
double hamiltonian_value(int i, double w, const Vec& y, const Vec& z, const Vec& u,
                         const Vec& k, const ControlProblem& problem);

/// Gradient of H in u (U inner product): D* k + l_u.
Vec hamiltonian_grad_u(int i, double w, const Vec& y, const Vec& z, const Vec& u,
                       const Vec& k, const ControlProblem& problem);

/// gamma(v) = -1/2 N^-1 v for an SPD control weight N.
Vec lq_gamma(const Vec& v, const Mat& n_mat);

/// One validated assumption: pass/fail, the worst margin seen over the
/// sampled probes, and a witness description on failure.
struct CheckResult {
    std::string name;
    bool pass = true;
    double margin = 0.0;
    std::string witness;
};

struct ValidationReport {
    std::vector<CheckResult> checks;

    bool all_pass() const;
    const CheckResult* find(const std::string& name) const;
};

/// Runs sampled validators for the standing assumptions on the problem
/// data: uniform bounds and finiteness of the coefficients, coercivity of
/// A, gradient consistency and growth of the integrand, monotonicity of
/// its gradients, and the minimizer-map properties. Failures are report
/// entries with witnesses, never exceptions.
ValidationReport validate_assumptions(const ControlProblem& problem, int probes, std::uint64_t seed);

} // namespace fbsee
