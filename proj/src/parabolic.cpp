#include "fbsee/parabolic.hpp"

#include "fbsee/evolution.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>
#include <sstream>

namespace fbsee {

namespace {

constexpr double kPi = std::numbers::pi;

// Interior coordinates of the tensor mesh, axis-major: index
// p = ix + mesh_n * iy maps to (x1, x2) = ((ix+1) h, (iy+1) h).
std::vector<double> interior_coords(int mesh_n, int space_dim, double h) {
    std::vector<double> xs;
    if (space_dim == 1) {
        for (int i = 0; i < mesh_n; ++i) xs.push_back((i + 1) * h);
    } else {
        for (int iy = 0; iy < mesh_n; ++iy)
            for (int ix = 0; ix < mesh_n; ++ix) {
                xs.push_back((ix + 1) * h);
                xs.push_back((iy + 1) * h);
            }
    }
    return xs;
}

Mat assemble_operator_1d(const ParabolicProblem& pp, double t, double w, int mesh_n, double h) {
    Mat A = Mat::Zero(mesh_n, mesh_n);
    for (int i = 0; i < mesh_n; ++i) {
        const double x = (i + 1) * h;
        const double a_plus = pp.a(t, w, x + 0.5 * h, 0.0)(0, 0);
        const double a_minus = pp.a(t, w, x - 0.5 * h, 0.0)(0, 0);
        const double bi = pp.b1 ? pp.b1(t, w, x, 0.0) : 0.0;
        const double ci = pp.c ? pp.c(t, w, x, 0.0) : 0.0;
        // -d/dx(a dy/dx): flux form with midpoint coefficients.
        A(i, i) += (a_plus + a_minus) / (h * h) - ci;
        if (i + 1 < mesh_n) A(i, i + 1) += -a_plus / (h * h);
        if (i - 1 >= 0) A(i, i - 1) += -a_minus / (h * h);
        // -b dy/dx: centered.
        if (i + 1 < mesh_n) A(i, i + 1) += -bi / (2.0 * h);
        if (i - 1 >= 0) A(i, i - 1) += bi / (2.0 * h);
    }
    return A;
}

Mat assemble_operator_2d(const ParabolicProblem& pp, double t, double w, int mesh_n, double h) {
    const int n = mesh_n * mesh_n;
    Mat A = Mat::Zero(n, n);
    auto idx = [mesh_n](int ix, int iy) { return ix + mesh_n * iy; };
    auto inside = [mesh_n](int ix, int iy) {
        return ix >= 0 && ix < mesh_n && iy >= 0 && iy < mesh_n;
    };
    auto add = [&](int r, int ix, int iy, double v) {
        if (inside(ix, iy)) A(r, idx(ix, iy)) += v; // outside entries are Dirichlet zeros
    };

    for (int iy = 0; iy < mesh_n; ++iy) {
        for (int ix = 0; ix < mesh_n; ++ix) {
            const int r = idx(ix, iy);
            const double x = (ix + 1) * h, y = (iy + 1) * h;
            const double a11_e = pp.a(t, w, x + 0.5 * h, y)(0, 0);
            const double a11_w = pp.a(t, w, x - 0.5 * h, y)(0, 0);
            const double a22_n = pp.a(t, w, x, y + 0.5 * h)(1, 1);
            const double a22_s = pp.a(t, w, x, y - 0.5 * h)(1, 1);
            const double b1 = pp.b1 ? pp.b1(t, w, x, y) : 0.0;
            const double b2 = pp.b2 ? pp.b2(t, w, x, y) : 0.0;
            const double cv = pp.c ? pp.c(t, w, x, y) : 0.0;

            add(r, ix, iy, (a11_e + a11_w + a22_n + a22_s) / (h * h) - cv);
            add(r, ix + 1, iy, -a11_e / (h * h) - b1 / (2.0 * h));
            add(r, ix - 1, iy, -a11_w / (h * h) + b1 / (2.0 * h));
            add(r, ix, iy + 1, -a22_n / (h * h) - b2 / (2.0 * h));
            add(r, ix, iy - 1, -a22_s / (h * h) + b2 / (2.0 * h));

            // Mixed term -d_x(a12 d_y .) - d_y(a12 d_x .), centered twice.
            const double a12_e = pp.a(t, w, x + h, y)(0, 1);
            const double a12_w = pp.a(t, w, x - h, y)(0, 1);
            const double a12_n = pp.a(t, w, x, y + h)(0, 1);
            const double a12_s = pp.a(t, w, x, y - h)(0, 1);
            const double c4 = 1.0 / (4.0 * h * h);
            add(r, ix + 1, iy + 1, -(a12_e + a12_n) * c4);
            add(r, ix + 1, iy - 1, (a12_e + a12_s) * c4);
            add(r, ix - 1, iy + 1, (a12_w + a12_n) * c4);
            add(r, ix - 1, iy - 1, -(a12_w + a12_s) * c4);
        }
    }
    return A;
}

} // namespace

ParabolicProblem ParabolicProblem::heat_unit(int mesh_n, double diffusion) {
    ParabolicProblem p;
    p.space_dim = 1;
    p.mesh_n = mesh_n;
    p.a = [diffusion](double, double, double, double) {
        return Mat::Constant(1, 1, diffusion);
    };
    p.b1 = nullptr;
    p.b2 = nullptr;
    p.c = nullptr;
    p.nu = nullptr;
    p.g = nullptr;
    p.xi = [](double, double x, double) { return std::sin(kPi * x); };
    p.kappa = diffusion;      // 2a = 2 * diffusion >= kappa
    p.big_k = std::max(2.0 * diffusion, 1.0);
    return p;
}

CheckResult check_super_parabolicity(const ParabolicProblem& problem, const TimeGrid& grid,
                                     const BrownianLattice& lattice, int samples_per_axis) {
    CheckResult c{"super-parabolicity", true, std::numeric_limits<double>::infinity(), ""};
    const int d = problem.space_dim;
    const double h = 1.0 / (problem.mesh_n + 1);
    for (int it = 0; it < samples_per_axis; ++it) {
        const int level = std::min(grid.steps - 1,
                                   (it * std::max(1, grid.steps / samples_per_axis)));
        const double t = grid.time(level);
        // Extreme nodes bracket the W range at a level.
        for (int node : {0, lattice.node_count(level) - 1}) {
            const double w = lattice.w_value(level, node);
            for (int ix = 0; ix <= samples_per_axis; ++ix) {
                const double x1 = ix * (problem.mesh_n + 1.0) / samples_per_axis * h;
                for (int iy = 0; iy <= (d == 2 ? samples_per_axis : 0); ++iy) {
                    const double x2 = d == 2 ? iy * (problem.mesh_n + 1.0) / samples_per_axis * h
                                             : 0.0;
                    const Mat a = problem.a(t, w, x1, x2);
                    Eigen::SelfAdjointEigenSolver<Mat> es(a + a.transpose(),
                                                          Eigen::EigenvaluesOnly);
                    const double lo = es.eigenvalues().minCoeff();
                    const double hi = es.eigenvalues().maxCoeff();
                    double margin = std::min(lo - problem.kappa, problem.big_k - hi);
                    auto bounded = [&](const ParabolicProblem::ScalarField& f) {
                        if (!f) return std::numeric_limits<double>::infinity();
                        return problem.big_k - std::abs(f(t, w, x1, x2));
                    };
                    margin = std::min({margin, bounded(problem.b1), bounded(problem.b2),
                                       bounded(problem.c), bounded(problem.nu),
                                       bounded(problem.g)});
                    if (margin < c.margin) c.margin = margin;
                    if (margin < -1e-12 && c.pass) {
                        c.pass = false;
                        std::ostringstream os;
                        os << "bounds violated at t=" << t << ", W=" << w << ", x=(" << x1;
                        if (d == 2) os << "," << x2;
                        os << "): 2a eigenvalues in [" << lo << "," << hi << "] vs [";
                        os << problem.kappa << "," << problem.big_k << "]";
                        c.witness = os.str();
                    }
                }
            }
        }
    }
    return c;
}

Mat dirichlet_stiffness(int mesh_n, int space_dim, double h) {
    Mat t = Mat::Zero(mesh_n, mesh_n);
    for (int i = 0; i < mesh_n; ++i) {
        t(i, i) = 2.0;
        if (i + 1 < mesh_n) t(i, i + 1) = -1.0;
        if (i > 0) t(i, i - 1) = -1.0;
    }
    if (space_dim == 1) return t / h;
    const Mat id = Mat::Identity(mesh_n, mesh_n);
    Mat k2 = Mat::Zero(mesh_n * mesh_n, mesh_n * mesh_n);
    // h^(d-2) (I (x) T + T (x) I) with d = 2.
    for (int a = 0; a < mesh_n; ++a)
        for (int b = 0; b < mesh_n; ++b)
            for (int c = 0; c < mesh_n; ++c)
                for (int d = 0; d < mesh_n; ++d) {
                    const int r = c + mesh_n * a, col = d + mesh_n * b;
                    k2(r, col) += id(a, b) * t(c, d) + t(a, b) * id(c, d);
                }
    return k2;
}

ControlProblem assemble_parabolic(const ParabolicProblem& pp, const TimeGrid& grid,
                                  BrownianLattice::Mode mode) {
    require(pp.mesh_n >= 2, "assemble_parabolic: need at least two interior mesh points");
    require(pp.space_dim == 1 || pp.space_dim == 2, "assemble_parabolic: spaceDim must be 1 or 2");
    require(pp.space_dim == 1 || mode == BrownianLattice::Mode::Chain,
            "assemble_parabolic: two-dimensional problems run in deterministic mode only");

    const int d = pp.space_dim;
    const int n = d == 1 ? pp.mesh_n : pp.mesh_n * pp.mesh_n;
    const double h = 1.0 / (pp.mesh_n + 1);

    ControlProblem p;
    p.lattice = std::make_shared<BrownianLattice>(grid, mode);
    p.control_dim = n;

    if (mode == BrownianLattice::Mode::Chain) {
        require(!pp.coefficients_node_dependent,
                "assemble_parabolic: deterministic mode requires deterministic coefficients");
        if (pp.nu) {
            for (int s = 0; s <= 8; ++s) {
                const double t = grid.horizon_t * s / 8.0;
                const double x = (1 + s % pp.mesh_n) * h;
                require(pp.nu(t, 0.0, x, d == 2 ? x : 0.0) == 0.0,
                        "assemble_parabolic: deterministic mode requires nu identically zero");
            }
        }
    }

    const CheckResult sp = check_super_parabolicity(pp, grid, *p.lattice);
    if (!sp.pass)
        throw ValidationError("assemble_parabolic: super-parabolicity violated: " + sp.witness);

    const double hd = std::pow(h, d);
    Mat mass = hd * Mat::Identity(n, n);
    Mat norm_v = mass + dirichlet_stiffness(pp.mesh_n, d, h);
    GelfandTriple triple(std::move(mass), std::move(norm_v));
    // Garding shift lambda = |c|_inf + |b|_inf^2 / (2 kappa) + 1 covers the
    // first- and zero-order terms.
    double b_inf = 0.0, c_inf = 0.0;
    for (int s = 0; s <= 8; ++s) {
        const double t = grid.horizon_t * s / 8.0;
        const double x = (1 + s % pp.mesh_n) * h;
        const double x2 = d == 2 ? x : 0.0;
        if (pp.b1) b_inf = std::max(b_inf, std::abs(pp.b1(t, 0.0, x, x2)));
        if (pp.b2 && d == 2) b_inf = std::max(b_inf, std::abs(pp.b2(t, 0.0, x, x2)));
        if (pp.c) c_inf = std::max(c_inf, std::abs(pp.c(t, 0.0, x, x2)));
    }
    triple.coercivity.lambda = c_inf + b_inf * b_inf / (2.0 * pp.kappa) + 1.0;
    p.triple = std::move(triple);

    EvolutionCoefficients coeffs;
    coeffs.dim = n;
    coeffs.control_dim = n;
    const auto ppc = pp; // capture by value: the assembled problem owns its data
    const double dtv = grid.dt;
    coeffs.a = [ppc, dtv, h](int i, double w) {
        const double t = i * dtv;
        return ppc.space_dim == 1 ? assemble_operator_1d(ppc, t, w, ppc.mesh_n, h)
                                  : assemble_operator_2d(ppc, t, w, ppc.mesh_n, h);
    };
    const int nn = n;
    coeffs.b = [ppc, dtv, h, nn](int i, double w) {
        Mat b = Mat::Zero(nn, nn);
        if (!ppc.nu) return b;
        const double t = i * dtv;
        int p_ = 0;
        const int my = ppc.space_dim == 2 ? ppc.mesh_n : 1;
        for (int iy = 0; iy < my; ++iy)
            for (int ix = 0; ix < ppc.mesh_n; ++ix, ++p_)
                b(p_, p_) = ppc.nu(t, w, (ix + 1) * h, ppc.space_dim == 2 ? (iy + 1) * h : 0.0);
        return b;
    };
    coeffs.d = [nn](int, double) { return Mat::Identity(nn, nn); };
    coeffs.g = [ppc, dtv, h, nn](int i, double w) {
        Vec g = Vec::Zero(nn);
        if (!ppc.g) return g;
        const double t = i * dtv;
        int p_ = 0;
        const int my = ppc.space_dim == 2 ? ppc.mesh_n : 1;
        for (int iy = 0; iy < my; ++iy)
            for (int ix = 0; ix < ppc.mesh_n; ++ix, ++p_)
                g(p_) = ppc.g(t, w, (ix + 1) * h, ppc.space_dim == 2 ? (iy + 1) * h : 0.0);
        return g;
    };
    coeffs.xi = [ppc, h, nn](double w) {
        Vec xi(nn);
        int p_ = 0;
        const int my = ppc.space_dim == 2 ? ppc.mesh_n : 1;
        for (int iy = 0; iy < my; ++iy)
            for (int ix = 0; ix < ppc.mesh_n; ++ix, ++p_)
                xi(p_) = ppc.xi(w, (ix + 1) * h, ppc.space_dim == 2 ? (iy + 1) * h : 0.0);
        return xi;
    };
    coeffs.bound_b = pp.big_k;
    coeffs.bound_d = 1.0;
    coeffs.time_dependent = pp.coefficients_time_dependent;
    coeffs.node_dependent =
        pp.coefficients_node_dependent && mode == BrownianLattice::Mode::Tree;
    p.coeffs = std::move(coeffs);

    // Unit quadratic integrand on the mesh: all weights are the identity
    // operator in the h-weighted inner products.
    p.mass_u = p.triple.mass_h;
    const Mat mass_h = p.triple.mass_h;
    IntegrandModel im;
    im.l = [mass_h](int, double, const Vec& y, const Vec& z, const Vec& u) {
        return y.dot(mass_h * y) + z.dot(mass_h * z) + u.dot(mass_h * u);
    };
    im.grad_l_y = [](int, double, const Vec& y, const Vec&, const Vec&) -> Vec { return 2.0 * y; };
    im.grad_l_z = [](int, double, const Vec&, const Vec& z, const Vec&) -> Vec { return 2.0 * z; };
    im.grad_l_u = [](int, double, const Vec&, const Vec&, const Vec& u) -> Vec { return 2.0 * u; };
    im.h = [mass_h](const Vec& y) { return y.dot(mass_h * y); };
    im.grad_h = [](const Vec& y) -> Vec { return 2.0 * y; };
    {
        // (grad diff, dy)_H = 2 |dy|_H^2 >= C |dy|_V^2 with the smallest
        // H-vs-V pencil eigenvalue; mesh-dependent but positive.
        Eigen::GeneralizedSelfAdjointEigenSolver<Mat> es(p.triple.mass_h, p.triple.norm_v,
                                                         Eigen::EigenvaluesOnly);
        im.monotonicity_c = 2.0 * es.eigenvalues().minCoeff();
        im.growth_c = 2.0;
    }
    p.integrand = std::move(im);

    MinimizerMap mm;
    mm.gamma = [](int, double, const Vec& v) -> Vec { return -0.5 * v; };
    mm.lipschitz_c = 0.5; // |D N^-1 D*| / 2 with unit operators
    p.minimizer = std::move(mm);

    LqIntegrandSpec lq;
    lq.m = [nn](int, double) { return Mat::Identity(nn, nn); };
    lq.q = [nn](int, double) { return Mat::Identity(nn, nn); };
    lq.n = [nn](int, double) { return Mat::Identity(nn, nn); };
    lq.h = Mat::Identity(nn, nn);
    p.lq = std::move(lq);

    ParabolicMeta meta;
    meta.space_dim = d;
    meta.mesh_n = pp.mesh_n;
    meta.h = h;
    meta.kappa = pp.kappa;
    meta.big_k = pp.big_k;
    meta.super_parabolicity = sp;
    meta.mesh_x = interior_coords(pp.mesh_n, d, h);
    p.parabolic = std::move(meta);

    p.finalize();
    return p;
}

double weak_solution_residual(const ControlProblem& problem, const AdaptedProcess& y,
                              const AdaptedProcess& z, const AdaptedProcess& u, int test_fns,
                              std::uint64_t seed) {
    require(problem.parabolic.has_value(), "weak_solution_residual: not a parabolic problem");
    require(y.dim() == problem.dim() && z.dim() == problem.dim() && u.dim() == problem.dim(),
            "weak_solution_residual: dimension mismatch");
    const auto& lat = *problem.lattice;
    const int N = problem.steps();
    const int n = problem.dim();
    const double dt = problem.dt();

    Rng rng(seed);
    std::vector<Vec> phis;
    for (int f = 0; f < test_fns; ++f) {
        Vec phi = rng.uniform_vec(n); // hat-function coefficients, zero on the boundary
        phi /= std::sqrt(std::max(1e-300, norm_h_sq(phi, problem.triple)));
        phis.push_back(std::move(phi));
    }

    double worst = 0.0;
    for (int i = 0; i < N; ++i) {
        for (int j = 0; j < lat.node_count(i); ++j) {
            // Integrated identity over one step: (y_i - E[y_{i+1}], phi)_H
            //  + dt <A y_i, phi> + dt (B z_i + u_i + G_i, phi)_H = 0,
            // normalized per unit time.
            const Vec lhs = y.at(i, j) - expect_next(y, i, j) +
                            dt * (problem.cache->a(i, j) * y.at(i, j)) +
                            dt * (problem.cache->b(i, j) * z.at(i, j) + u.at(i, j) +
                                  problem.cache->g(i, j));
            for (const Vec& phi : phis) {
                const double r = inner_h(lhs, phi, problem.triple) / dt;
                worst = std::max(worst, std::abs(r));
            }
        }
    }
    return worst;
}

Vec heat_decay_reference(int mesh_n, double horizon_t) {
    const double h = 1.0 / (mesh_n + 1);
    Vec ref(mesh_n);
    const double amp = std::exp(-kPi * kPi * horizon_t / 2.0);
    for (int i = 0; i < mesh_n; ++i) ref(i) = amp * std::sin(kPi * (i + 1) * h);
    return ref;
}

} // namespace fbsee
