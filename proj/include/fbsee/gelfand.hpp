#pragma once

#include "fbsee/types.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace fbsee {

/// Certificate that the drift operator family satisfies the Garding
/// inequality <A x, x> + lambda |x|_H^2 >= alpha |x|_V^2, plus a uniform
/// operator bound.
struct CoercivityCertificate {
    double alpha = 0.0;
    double lambda = 0.0;
    double bound_c = 0.0;
};

/// Finite-dimensional stand-in for the triple V c H c V* of spaces.
///
/// Everything is stored in one coordinate system (Galerkin coefficients).
/// The H inner product is (x, y)_H = x^T massH y, the squared V norm is
/// x^T normV x, and a V*-valued vector f pairs against x as <f, x> =
/// (f, x)_H. With massH = normV = I (the abstract default) all three
/// spaces coincide with R^n and the pairing is the plain dot product.
struct GelfandTriple {
    int dim = 0;
    Mat mass_h;  // SPD
    Mat norm_v;  // SPD
    CoercivityCertificate coercivity;

    GelfandTriple() = default;
    GelfandTriple(Mat mass, Mat norm, CoercivityCertificate cert = {});

    static GelfandTriple identity(int n, CoercivityCertificate cert = {});

    /// Largest c with x^T massH x <= c x^T normV x (embedding constant),
    /// from the generalized eigenproblem massH x = c normV x.
    double embedding_constant() const;
};

double inner_h(const Vec& x, const Vec& y, const GelfandTriple& triple);
double norm_h_sq(const Vec& x, const GelfandTriple& triple);
double norm_v_sq(const Vec& x, const GelfandTriple& triple);

/// <f, x> duality pairing of a V*-coordinate vector f against x.
double pairing(const Vec& f, const Vec& x, const GelfandTriple& triple);

/// Largest alpha >= 0 with <A x, x> + lambda |x|_H^2 >= alpha |x|_V^2 over
/// all samples: the smallest generalized eigenvalue of
/// sym(massH A) + lambda massH against normV. Empty if that minimum is <= 0.
std::optional<double> certify_coercivity(const std::vector<Mat>& a_samples,
                                         const GelfandTriple& triple,
                                         double lambda);

/// Time- and path-indexed coefficient family of the evolution pair.
/// All callbacks depend on the lattice node only through (time index, W),
/// which keeps predictability structural.
struct EvolutionCoefficients {
    int dim = 0;          // n, state dimension
    int control_dim = 0;  // m

    std::function<Mat(int, double)> a;   // (i, W) -> n x n, V -> V*
    std::function<Mat(int, double)> b;   // (i, W) -> n x n, H -> H
    std::function<Mat(int, double)> d;   // (i, W) -> n x m, U -> H
    std::function<Vec(int, double)> g;   // (i, W) -> n, forcing
    std::function<Vec(double)> xi;       // (W_T) -> n, terminal datum

    // Adjoints w.r.t. the massH pairing (and massU for d). Populated by
    // build_adjoints.
    std::function<Mat(int, double)> adjoint_a;
    std::function<Mat(int, double)> adjoint_b;
    std::function<Mat(int, double)> adjoint_d;

    // Declared uniform bounds for B and D (spectral norm), and the operator
    // bound for A.
    double bound_b = 0.0;
    double bound_d = 0.0;

    // Whether the family genuinely varies with the time index / the node.
    // Only used to size the factorization cache.
    bool time_dependent = false;
    bool node_dependent = false;

    bool has_adjoints() const { return static_cast<bool>(adjoint_a); }
};

/// Derives adjoint_a/b/d from a/b/d: A* = massH^-1 A^T massH and
/// D* = massU^-1 D^T massH, so the pairing identities
/// (A x, y)_H = (x, A* y)_H and (D u, x)_H = (u, D* x)_U hold exactly.
EvolutionCoefficients build_adjoints(EvolutionCoefficients coeffs,
                                     const GelfandTriple& triple,
                                     const Mat& mass_u);

/// Matrix adjoint w.r.t. a single SPD mass matrix.
Mat adjoint_matrix(const Mat& a, const Mat& mass);

} // namespace fbsee
