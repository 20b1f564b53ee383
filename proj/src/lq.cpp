#include "fbsee/lq.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>

namespace fbsee {

namespace {

double min_eig(const Mat& m) {
    Eigen::SelfAdjointEigenSolver<Mat> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
    return es.eigenvalues().minCoeff();
}

// log-perturbation value and gradient: c sum_i log(1 + y_i^2).
double log_perturb_value(double c, const Vec& y) {
    double s = 0.0;
    for (int i = 0; i < y.size(); ++i) s += std::log1p(y[i] * y[i]);
    return c * s;
}

Vec log_perturb_grad(double c, const Vec& y) {
    Vec g(y.size());
    for (int i = 0; i < y.size(); ++i) g[i] = c * 2.0 * y[i] / (1.0 + y[i] * y[i]);
    return g;
}

} // namespace

LqProblemSpec LqProblemSpec::scalar(double a, double b, double d, double g, double m, double q,
                                    double n, double h, std::function<Vec(double)> xi,
                                    double horizon_t, int steps, BrownianLattice::Mode mode) {
    LqProblemSpec spec;
    spec.dim = 1;
    spec.control_dim = 1;
    spec.horizon_t = horizon_t;
    spec.steps = steps;
    spec.mode = mode;
    auto cmat = [](double v) {
        return [v](int, double) { return Mat::Constant(1, 1, v); };
    };
    spec.a = cmat(a);
    spec.b = cmat(b);
    spec.d = cmat(d);
    spec.m = cmat(m);
    spec.q = cmat(q);
    spec.n = cmat(n);
    spec.g = [g](int, double) { return Vec::Constant(1, g); };
    spec.xi = std::move(xi);
    spec.h = Mat::Constant(1, 1, h);
    spec.bound_b = std::abs(b);
    spec.bound_d = std::abs(d);
    return spec;
}

ControlProblem make_lq_problem(const LqProblemSpec& spec) {
    require(spec.dim > 0 && spec.control_dim > 0, "make_lq_problem: dimensions must be positive");
    require(static_cast<bool>(spec.a) && static_cast<bool>(spec.b) && static_cast<bool>(spec.d) &&
                static_cast<bool>(spec.m) && static_cast<bool>(spec.q) && static_cast<bool>(spec.n) &&
                static_cast<bool>(spec.g) && static_cast<bool>(spec.xi),
            "make_lq_problem: all coefficient callbacks must be set");
    require(spec.h.rows() == spec.dim && spec.h.cols() == spec.dim,
            "make_lq_problem: h matrix dimension mismatch");

    ControlProblem p;
    p.lattice = std::make_shared<BrownianLattice>(
        TimeGrid(spec.horizon_t, spec.steps),
        spec.mode, spec.tree_cap);
    p.control_dim = spec.control_dim;
    p.mass_u = Mat::Identity(spec.control_dim, spec.control_dim);

    // Sample the integrand weights over the grid to pin the monotonicity
    // constant and validate positivity early.
    double min_m = std::numeric_limits<double>::infinity();
    double min_q = min_m, min_n = min_m, max_n = 0.0;
    {
        const auto& lat = *p.lattice;
        for (int i = 0; i < lat.grid().steps; ++i) {
            // Extreme nodes bracket the W range at a level; sample both plus the center.
            for (int j : {0, lat.node_count(i) / 2, lat.node_count(i) - 1}) {
                const double w = lat.w_value(i, j);
                min_m = std::min(min_m, min_eig(spec.m(i, w)));
                min_q = std::min(min_q, min_eig(spec.q(i, w)));
                const double ne = min_eig(spec.n(i, w));
                min_n = std::min(min_n, ne);
                max_n = std::max(max_n, spec.n(i, w).operatorNorm());
            }
        }
    }
    const double min_h = min_eig(spec.h);

    const double c_log = spec.log_perturbation;
    if (c_log != 0.0) {
        require(c_log > 0.0, "make_lq_problem: log perturbation weight must be >= 0");
        require(c_log <= 4.0 * min_m,
                "make_lq_problem: log perturbation too strong to stay convexity-dominated "
                "(needs c <= 4 min_eig(M))");
    }
    // d^2/dy^2 log(1+y^2) >= -1/4, so the perturbed y-monotonicity constant
    // drops by at most c/4.
    const double monot =
        std::min({2.0 * min_m - 0.25 * c_log, 2.0 * min_q, 2.0 * min_h});

    GelfandTriple triple = GelfandTriple::identity(spec.dim);
    triple.coercivity.lambda = 1.0; // harmless default shift for the certificate
    p.triple = std::move(triple);

    EvolutionCoefficients coeffs;
    coeffs.dim = spec.dim;
    coeffs.control_dim = spec.control_dim;
    coeffs.a = spec.a;
    coeffs.b = spec.b;
    coeffs.d = spec.d;
    coeffs.g = spec.g;
    coeffs.xi = spec.xi;
    coeffs.bound_b = spec.bound_b;
    coeffs.bound_d = spec.bound_d;
    coeffs.time_dependent = spec.time_dependent;
    coeffs.node_dependent = spec.node_dependent || p.lattice->mode() == BrownianLattice::Mode::Tree;
    p.coeffs = std::move(coeffs);

    LqIntegrandSpec lq;
    lq.m = spec.m;
    lq.q = spec.q;
    lq.n = spec.n;
    lq.h = spec.h;
    lq.log_perturbation = c_log;
    p.lq = lq;

    IntegrandModel im;
    auto fm = spec.m;
    auto fq = spec.q;
    auto fn = spec.n;
    const Mat hmat = spec.h;
    im.l = [fm, fq, fn, c_log](int i, double w, const Vec& y, const Vec& z, const Vec& u) {
        double v = y.dot(fm(i, w) * y) + z.dot(fq(i, w) * z) + u.dot(fn(i, w) * u);
        if (c_log != 0.0) v += log_perturb_value(c_log, y);
        return v;
    };
    im.grad_l_y = [fm, c_log](int i, double w, const Vec& y, const Vec&, const Vec&) -> Vec {
        Vec g = 2.0 * (fm(i, w) * y);
        if (c_log != 0.0) g += log_perturb_grad(c_log, y);
        return g;
    };
    im.grad_l_z = [fq](int i, double w, const Vec&, const Vec& z, const Vec&) -> Vec {
        return 2.0 * (fq(i, w) * z);
    };
    im.grad_l_u = [fn](int i, double w, const Vec&, const Vec&, const Vec& u) -> Vec {
        return 2.0 * (fn(i, w) * u);
    };
    im.h = [hmat](const Vec& y) { return y.dot(hmat * y); };
    im.grad_h = [hmat](const Vec& y) -> Vec { return 2.0 * (hmat * y); };
    im.monotonicity_c = monot;
    {
        // Crude but valid quadratic growth constant from sampled operator norms.
        double gc = std::max({1.0, min_m, min_q, max_n});
        const auto& lat = *p.lattice;
        for (int i = 0; i < lat.grid().steps; ++i) {
            const double w = lat.w_value(i, 0);
            gc = std::max({gc, spec.m(i, w).operatorNorm(), spec.q(i, w).operatorNorm(),
                           spec.n(i, w).operatorNorm()});
        }
        gc = std::max(gc, hmat.operatorNorm());
        im.growth_c = 2.0 * gc + c_log + 1.0;
    }
    p.integrand = std::move(im);

    MinimizerMap mm;
    mm.gamma = [fn](int i, double w, const Vec& v) { return lq_gamma(v, fn(i, w)); };
    // |D gamma(D* k1) - D gamma(D* k2)| = |1/2 D N^-1 D* dk| <= |D|^2 / (2 min_eig N) |dk|.
    mm.lipschitz_c =
        (min_n > 0.0) ? (std::max(spec.bound_d, 1.0) * std::max(spec.bound_d, 1.0)) / (2.0 * min_n)
                      : std::numeric_limits<double>::infinity();
    p.minimizer = std::move(mm);

    p.finalize();
    return p;
}

} // namespace fbsee
