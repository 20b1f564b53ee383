#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsee/gelfand.hpp"
#include "fbsee/parabolic.hpp"

#include <cmath>

using namespace fbsee;

TEST_CASE("inner product and norms") {
    GelfandTriple id2 = GelfandTriple::identity(2);
    CHECK(inner_h(Vec{{1.0, 0.0}}, Vec{{0.0, 1.0}}, id2) == 0.0);
    CHECK(inner_h(Vec{{1.0, 1.0}}, Vec{{1.0, 1.0}}, id2) == 2.0);

    GelfandTriple half(Mat::Constant(1, 1, 0.5), Mat::Constant(1, 1, 0.5));
    CHECK(inner_h(Vec{{2.0}}, Vec{{3.0}}, half) == doctest::Approx(3.0));

    CHECK(norm_v_sq(Vec::Zero(2), id2) == 0.0);
    CHECK(norm_v_sq(Vec{{3.0, 4.0}}, id2) == doctest::Approx(25.0));
    CHECK_THROWS_AS(inner_h(Vec::Zero(3), Vec::Zero(2), id2), ValidationError);
}

TEST_CASE("discrete H1 norm matches independent assembly") {
    // Three interior points on (0,1), h = 1/4, lumped mass h I plus the
    // (1/h) tridiag(-1, 2, -1) stiffness.
    const int n = 3;
    const double h = 0.25;
    Mat mass = h * Mat::Identity(n, n);
    Mat stiff = Mat::Zero(n, n);
    for (int i = 0; i < n; ++i) {
        stiff(i, i) = 2.0 / h;
        if (i > 0) stiff(i, i - 1) = -1.0 / h;
        if (i + 1 < n) stiff(i, i + 1) = -1.0 / h;
    }
    CHECK((dirichlet_stiffness(n, 1, h) - stiff).norm() == doctest::Approx(0.0).scale(1));

    GelfandTriple triple(mass, mass + stiff);
    Vec hat{{0.0, 1.0, 0.0}};
    const double expected = hat.dot((mass + stiff) * hat); // 0.25 + 8
    CHECK(expected == doctest::Approx(8.25));
    CHECK(norm_v_sq(hat, triple) == doctest::Approx(expected).epsilon(1e-15));
}

TEST_CASE("triple construction validates spd and symmetry") {
    Mat bad = Mat::Identity(2, 2);
    bad(0, 1) = 1e-3; // asymmetric
    CHECK_THROWS_AS(GelfandTriple(bad, Mat::Identity(2, 2)), ValidationError);
    Mat negative = -Mat::Identity(2, 2);
    CHECK_THROWS_AS(GelfandTriple(negative, Mat::Identity(2, 2)), ValidationError);
}

TEST_CASE("coercivity certification") {
    GelfandTriple id1 = GelfandTriple::identity(1);

    // A equals the V-norm matrix: alpha = 1.
    GelfandTriple idn = GelfandTriple::identity(4);
    auto alpha = certify_coercivity({Mat::Identity(4, 4)}, idn, 0.0);
    REQUIRE(alpha.has_value());
    CHECK(*alpha == doctest::Approx(1.0).epsilon(1e-12));

    // Scalar arithmetic: -1 + 2 = 1.
    auto alpha2 = certify_coercivity({-Mat::Identity(1, 1)}, id1, 2.0);
    REQUIRE(alpha2.has_value());
    CHECK(*alpha2 == doctest::Approx(1.0).epsilon(1e-12));

    // Negative case: no positive constant.
    CHECK_FALSE(certify_coercivity({-Mat::Identity(1, 1)}, id1, 0.5).has_value());
    CHECK_THROWS_AS(certify_coercivity({}, id1, 0.0), ValidationError);
}

TEST_CASE("coercivity of the FD diffusion stencil against the closed-form spectrum") {
    // Diffusion 1/2 on (0,1) with 7 interior points; cross-check the
    // generalized eigensolve against the tridiagonal spectrum
    // tau_k = 4 sin^2(k pi h / 2).
    const int n = 7;
    const double h = 1.0 / (n + 1);
    ParabolicProblem pp = ParabolicProblem::heat_unit(n);
    Mat a = Mat::Zero(n, n);
    {
        TimeGrid grid(1.0, 4);
        auto problem = assemble_parabolic(pp, grid, BrownianLattice::Mode::Chain);
        a = problem.coeffs.a(0, 0.0);

        auto alpha = certify_coercivity({a}, problem.triple, 0.0);
        REQUIRE(alpha.has_value());

        // With massH = h I and normV = h I + (1/h) T, the pencil reduces to
        // 0.5 tau_k / (h^2 + tau_k) over the stencil eigenvalues.
        double expected = std::numeric_limits<double>::infinity();
        for (int k = 1; k <= n; ++k) {
            const double tau = 4.0 * std::pow(std::sin(k * M_PI * h / 2.0), 2.0);
            expected = std::min(expected, 0.5 * tau / (h * h + tau));
        }
        CHECK(*alpha == doctest::Approx(expected).epsilon(1e-10));
    }
}

TEST_CASE("coercivity constant is monotone in lambda") {
    GelfandTriple idn = GelfandTriple::identity(3);
    Mat a(3, 3);
    a << 1.0, 0.3, 0.0, -0.3, 0.5, 0.2, 0.0, -0.2, 0.8;
    double prev = -1e9;
    for (double lambda : {-0.5, 0.0, 0.5, 1.0}) {
        const Mat form = 0.5 * (a + a.transpose()) + lambda * Mat::Identity(3, 3);
        Eigen::SelfAdjointEigenSolver<Mat> es(form, Eigen::EigenvaluesOnly);
        const double alpha = es.eigenvalues().minCoeff();
        CHECK(alpha >= prev);
        prev = alpha;
    }
}

TEST_CASE("adjoints: identity mass transposes, weighted mass conjugates") {
    CHECK((adjoint_matrix(Mat::Identity(2, 2), Mat::Identity(2, 2)) - Mat::Identity(2, 2))
              .cwiseAbs()
              .maxCoeff() == doctest::Approx(0.0).scale(1));

    Mat a = Mat::Zero(2, 2);
    a(0, 1) = 1.0;
    const Mat at = adjoint_matrix(a, Mat::Identity(2, 2));
    CHECK(at(1, 0) == doctest::Approx(1.0));
    CHECK(at(0, 1) == doctest::Approx(0.0).scale(1));

    Mat mass = Mat::Zero(2, 2);
    mass(0, 0) = 1.0;
    mass(1, 1) = 2.0;
    const Mat astar = adjoint_matrix(a, mass);
    const Mat expected = mass.inverse() * a.transpose() * mass;
    CHECK((astar - expected).cwiseAbs().maxCoeff() < 1e-14);

    // Pairing identity on random probes.
    GelfandTriple triple(mass, mass);
    Rng rng(7);
    for (int p = 0; p < 10; ++p) {
        const Vec x = rng.uniform_vec(2), y = rng.uniform_vec(2);
        CHECK(inner_h(a * x, y, triple) ==
              doctest::Approx(inner_h(x, astar * y, triple)).epsilon(1e-10));
    }
}

TEST_CASE("adjoint involution returns the original operator") {
    Rng rng(11);
    Mat a(3, 3), mass = Mat::Zero(3, 3);
    for (int i = 0; i < 3; ++i) {
        mass(i, i) = 1.0 + rng.uniform();
        for (int j = 0; j < 3; ++j) a(i, j) = rng.uniform(-1.0, 1.0);
    }
    const Mat twice = adjoint_matrix(adjoint_matrix(a, mass), mass);
    CHECK((twice - a).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("build_adjoints wires the callbacks") {
    EvolutionCoefficients c;
    c.dim = 2;
    c.control_dim = 1;
    Mat a(2, 2);
    a << 0.0, 1.0, 0.0, 0.0;
    c.a = [a](int, double) { return a; };
    c.b = [](int, double) { return Mat::Identity(2, 2); };
    c.d = [](int, double) { return Mat::Constant(2, 1, 1.0); };
    c.g = [](int, double) { return Vec::Zero(2); };
    c.xi = [](double) { return Vec::Zero(2); };

    GelfandTriple triple = GelfandTriple::identity(2);
    auto built = build_adjoints(std::move(c), triple, Mat::Identity(1, 1));
    REQUIRE(built.has_adjoints());
    CHECK((built.adjoint_a(0, 0.0) - a.transpose()).cwiseAbs().maxCoeff() < 1e-14);
    CHECK((built.adjoint_d(0, 0.0) - Mat::Constant(1, 2, 1.0)).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("embedding constant exists for spd pencils") {
    GelfandTriple idn = GelfandTriple::identity(5);
    CHECK(idn.embedding_constant() == doctest::Approx(1.0).epsilon(1e-12));
}
