#include "fbsee/hamiltonian.hpp"

#include "fbsee/problem.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <sstream>

namespace fbsee {

double hamiltonian_value(int i, double w, const Vec& y, const Vec& z, const Vec& u, const Vec& k,
                         const ControlProblem& problem) {
    require(y.size() == problem.dim() && z.size() == problem.dim() && k.size() == problem.dim(),
            "hamiltonian_value: state dimension mismatch");
    require(u.size() == problem.control_dim, "hamiltonian_value: control dimension mismatch");
    const Mat b = problem.coeffs.b(i, w);
    const Mat d = problem.coeffs.d(i, w);
    return inner_h(b * z + d * u, k, problem.triple) + problem.integrand.l(i, w, y, z, u);
}

Vec hamiltonian_grad_u(int i, double w, const Vec& y, const Vec& z, const Vec& u, const Vec& k,
                       const ControlProblem& problem) {
    require(u.size() == problem.control_dim, "hamiltonian_grad_u: control dimension mismatch");
    const Mat dstar = problem.coeffs.adjoint_d(i, w);
    return dstar * k + problem.integrand.grad_l_u(i, w, y, z, u);
}

Vec lq_gamma(const Vec& v, const Mat& n_mat) {
    require(n_mat.rows() == v.size() && n_mat.cols() == v.size(), "lq_gamma: dimension mismatch");
    Eigen::LDLT<Mat> ldlt(n_mat);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive() ||
        (n_mat.diagonal().minCoeff() <= 0.0))
        throw ValidationError("lq_gamma: control weight N must be positive-definite");
    return -0.5 * ldlt.solve(v);
}

bool ValidationReport::all_pass() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

const CheckResult* ValidationReport::find(const std::string& name) const {
    for (const auto& c : checks)
        if (c.name == name) return &c;
    return nullptr;
}

namespace {

constexpr double kMarginTol = 1e-8;

std::string describe_probe(int i, int node, const char* what) {
    std::ostringstream os;
    os << what << " at time index " << i << ", node " << node;
    return os.str();
}

// Uniformly samples (level, node) pairs; deterministic given the rng state.
std::pair<int, int> sample_node(const BrownianLattice& lat, Rng& rng) {
    const int i = static_cast<int>(rng.uniform(0.0, static_cast<double>(lat.grid().steps)));
    const int j = static_cast<int>(rng.uniform(0.0, static_cast<double>(lat.node_count(i))));
    return {i, std::min(j, lat.node_count(i) - 1)};
}

} // namespace

ValidationReport validate_assumptions(const ControlProblem& problem, int probes,
                                      std::uint64_t seed) {
    require(probes > 0, "validate_assumptions: probes must be positive");
    ValidationReport report;
    Rng rng(seed);
    const auto& lat = *problem.lattice;
    const int n = problem.dim();
    const int m = problem.control_dim;

    // --- (A.1): uniform bounds on B and D, finite terminal data and forcing.
    {
        CheckResult c{"bounds", true, std::numeric_limits<double>::infinity(), ""};
        const double bb = problem.coeffs.bound_b;
        const double bd = problem.coeffs.bound_d;
        for (int p = 0; p < probes; ++p) {
            auto [i, j] = sample_node(lat, rng);
            const double w = problem.w(i, j);
            const double nb = problem.coeffs.b(i, w).operatorNorm();
            const double nd = problem.coeffs.d(i, w).operatorNorm();
            const double margin = std::min(bb - nb, bd - nd);
            if (margin < c.margin) c.margin = margin;
            if (margin < -kMarginTol && c.pass) {
                c.pass = false;
                c.witness = describe_probe(i, j, "operator norm exceeds declared bound");
            }
            if (!problem.coeffs.g(i, w).allFinite()) {
                c.pass = false;
                c.witness = describe_probe(i, j, "non-finite forcing G");
            }
        }
        const int N = problem.steps();
        for (int j = 0; j < lat.node_count(N); ++j) {
            if (!problem.coeffs.xi(problem.w(N, j)).allFinite()) {
                c.pass = false;
                c.witness = describe_probe(N, j, "non-finite terminal datum");
            }
        }
        report.checks.push_back(std::move(c));
    }

    // --- (A.2): coercivity of A at sampled nodes, with the declared shift.
    {
        CheckResult c{"coercivity", true, 0.0, ""};
        std::vector<Mat> samples;
        for (int p = 0; p < probes; ++p) {
            auto [i, j] = sample_node(lat, rng);
            samples.push_back(problem.coeffs.a(i, problem.w(i, j)));
        }
        auto alpha = certify_coercivity(samples, problem.triple, problem.triple.coercivity.lambda);
        if (alpha) {
            c.margin = *alpha;
        } else {
            c.pass = false;
            c.witness = "no positive coercivity constant over sampled drift operators";
        }
        report.checks.push_back(std::move(c));
    }

    // --- (A.3): gradient consistency of l and h by central differences.
    {
        CheckResult c{"gradient-consistency", true, 0.0, ""};
        const double fd_eps = 1e-5;
        double worst = 0.0;
        for (int p = 0; p < probes && c.pass; ++p) {
            auto [i, j] = sample_node(lat, rng);
            const double w = problem.w(i, j);
            const Vec y = rng.uniform_vec(n), z = rng.uniform_vec(n), u = rng.uniform_vec(m);
            const Vec dy = rng.uniform_vec(n), dz = rng.uniform_vec(n), du = rng.uniform_vec(m);

            auto lv = [&](const Vec& yy, const Vec& zz, const Vec& uu) {
                return problem.integrand.l(i, w, yy, zz, uu);
            };
            const double fd =
                (lv(y + fd_eps * dy, z + fd_eps * dz, u + fd_eps * du) -
                 lv(y - fd_eps * dy, z - fd_eps * dz, u - fd_eps * du)) /
                (2.0 * fd_eps);
            const double an = inner_h(problem.integrand.grad_l_y(i, w, y, z, u), dy, problem.triple) +
                              inner_h(problem.integrand.grad_l_z(i, w, y, z, u), dz, problem.triple) +
                              problem.inner_u(problem.integrand.grad_l_u(i, w, y, z, u), du);
            const double rel = std::abs(fd - an) / std::max(1.0, std::abs(fd));
            worst = std::max(worst, rel);

            const double fdh = (problem.integrand.h(y + fd_eps * dy) -
                                problem.integrand.h(y - fd_eps * dy)) /
                               (2.0 * fd_eps);
            const double anh = inner_h(problem.integrand.grad_h(y), dy, problem.triple);
            worst = std::max(worst, std::abs(fdh - anh) / std::max(1.0, std::abs(fdh)));

            if (worst > 1e-6) {
                c.pass = false;
                c.witness = describe_probe(i, j, "finite differences disagree with gradients");
            }
        }
        c.margin = 1e-6 - worst;
        report.checks.push_back(std::move(c));
    }

    // --- (A.3) growth: |l| and gradient norms against the declared constant.
    {
        CheckResult c{"growth", true, std::numeric_limits<double>::infinity(), ""};
        const double C = problem.integrand.growth_c;
        for (int p = 0; p < probes; ++p) {
            auto [i, j] = sample_node(lat, rng);
            const double w = problem.w(i, j);
            const Vec y = 3.0 * rng.uniform_vec(n), z = 3.0 * rng.uniform_vec(n),
                      u = 3.0 * rng.uniform_vec(m);
            const double ny2 = norm_v_sq(y, problem.triple);
            const double nz2 = norm_h_sq(z, problem.triple);
            const double nu2 = problem.inner_u(u, u);
            const double bound = C * (1.0 + ny2 + nz2 + nu2);
            const double lval = std::abs(problem.integrand.l(i, w, y, z, u));
            const double gnorm =
                std::sqrt(norm_v_sq(problem.integrand.grad_l_y(i, w, y, z, u), problem.triple)) +
                std::sqrt(norm_h_sq(problem.integrand.grad_l_z(i, w, y, z, u), problem.triple)) +
                problem.norm_u(problem.integrand.grad_l_u(i, w, y, z, u));
            const double gbound = C * (1.0 + std::sqrt(ny2) + std::sqrt(nz2) + std::sqrt(nu2));
            const double margin = std::min(bound - lval, gbound - gnorm);
            if (margin < c.margin) c.margin = margin;
            if (margin < -kMarginTol && c.pass) {
                c.pass = false;
                c.witness = describe_probe(i, j, "growth bound violated");
            }
        }
        report.checks.push_back(std::move(c));
    }

    // --- (A.4): monotonicity of the integrand gradients, shared control.
    {
        CheckResult c{"monotonicity", true, std::numeric_limits<double>::infinity(), ""};
        const double C = problem.integrand.monotonicity_c;
        for (int p = 0; p < probes; ++p) {
            auto [i, j] = sample_node(lat, rng);
            const double w = problem.w(i, j);
            const Vec y1 = rng.uniform_vec(n), z1 = rng.uniform_vec(n);
            const Vec y2 = rng.uniform_vec(n), z2 = rng.uniform_vec(n);
            const Vec u = rng.uniform_vec(m);
            const Vec dy = y1 - y2, dz = z1 - z2;
            const double lhs =
                inner_h(problem.integrand.grad_l_y(i, w, y1, z1, u) -
                            problem.integrand.grad_l_y(i, w, y2, z2, u),
                        dy, problem.triple) +
                inner_h(problem.integrand.grad_l_z(i, w, y1, z1, u) -
                            problem.integrand.grad_l_z(i, w, y2, z2, u),
                        dz, problem.triple);
            const double rhs = C * (norm_v_sq(dy, problem.triple) + norm_h_sq(dz, problem.triple));
            const double lhs_h = inner_h(problem.integrand.grad_h(y1) - problem.integrand.grad_h(y2),
                                         dy, problem.triple);
            const double rhs_h = C * norm_v_sq(dy, problem.triple);
            const double margin = std::min(lhs - rhs, lhs_h - rhs_h);
            if (margin < c.margin) c.margin = margin;
            if (margin < -kMarginTol && c.pass) {
                c.pass = false;
                c.witness = describe_probe(i, j, "monotonicity inequality violated");
            }
        }
        report.checks.push_back(std::move(c));
    }

    // --- (A.5): minimizer map -- minimality, dissipativity and Lipschitz bound.
    {
        CheckResult c{"minimizer-map", true, std::numeric_limits<double>::infinity(), ""};
        try {
            for (int p = 0; p < probes; ++p) {
                auto [i, j] = sample_node(lat, rng);
                const double w = problem.w(i, j);
                const Mat d = problem.coeffs.d(i, w);
                const Mat dstar = problem.coeffs.adjoint_d(i, w);
                const Vec y = rng.uniform_vec(n), z = rng.uniform_vec(n);
                const Vec k1 = rng.uniform_vec(n), k2 = rng.uniform_vec(n);

                const Vec g1 = problem.minimizer.gamma(i, w, dstar * k1);
                const Vec g2 = problem.minimizer.gamma(i, w, dstar * k2);

                // Minimality of gamma against random competitor controls.
                const double h_at_gamma = hamiltonian_value(i, w, y, z, g1, k1, problem);
                const Vec v = rng.uniform_vec(m);
                const double h_at_probe = hamiltonian_value(i, w, y, z, g1 + v, k1, problem);
                double margin = h_at_probe - h_at_gamma + kMarginTol;

                // Dissipativity: (D gamma(D*k1) - D gamma(D*k2), k1 - k2) <= 0.
                const double dissip = inner_h(d * (g1 - g2), k1 - k2, problem.triple);
                margin = std::min(margin, -dissip + 1e-10);

                // Lipschitz: |D gamma(D*k1) - D gamma(D*k2)|_H <= L |k1-k2|_V.
                const double lip =
                    problem.minimizer.lipschitz_c *
                        std::sqrt(norm_v_sq(k1 - k2, problem.triple)) -
                    std::sqrt(norm_h_sq(d * (g1 - g2), problem.triple));
                margin = std::min(margin, lip + 1e-10);

                if (margin < c.margin) c.margin = margin;
                if (margin < -kMarginTol && c.pass) {
                    c.pass = false;
                    c.witness = describe_probe(i, j, "minimizer-map property violated");
                }
            }
        } catch (const ValidationError& e) {
            c.pass = false;
            c.margin = -std::numeric_limits<double>::infinity();
            c.witness = e.what();
        }
        report.checks.push_back(std::move(c));
    }

    // --- Front-end specific validation recorded at assembly time.
    if (problem.parabolic) report.checks.push_back(problem.parabolic->super_parabolicity);

    return report;
}

} // namespace fbsee
