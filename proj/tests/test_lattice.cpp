#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "fbsee/gelfand.hpp"
#include "fbsee/lattice.hpp"

#include <cmath>

using namespace fbsee;

namespace {

std::shared_ptr<const BrownianLattice> tree(double T, int N) {
    return std::make_shared<BrownianLattice>(make_tree_lattice(TimeGrid(T, N)));
}

std::shared_ptr<const BrownianLattice> chain(double T, int N) {
    return std::make_shared<BrownianLattice>(make_deterministic_lattice(TimeGrid(T, N)));
}

} // namespace

TEST_CASE("time grid invariants") {
    TimeGrid g(2.0, 8);
    CHECK(g.dt == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(g.time(8) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK_THROWS_AS(TimeGrid(-1.0, 4), ValidationError);
    CHECK_THROWS_AS(TimeGrid(1.0, 0), ValidationError);
}

TEST_CASE("tree cap refuses deep trees") {
    CHECK_THROWS_AS(make_tree_lattice(TimeGrid(1.0, 20)), ValidationError);
    CHECK_NOTHROW(make_tree_lattice(TimeGrid(1.0, 20), 24));
}

TEST_CASE("level structure and exact moments") {
    auto lat = tree(1.0, 6);
    for (int i = 0; i <= 6; ++i) CHECK(lat->node_count(i) == (1 << i));

    // E[W] = 0 and E[W^2] = t exactly at every level.
    AdaptedProcess w(lat, 1, 6);
    for (int i = 0; i <= 6; ++i)
        for (int j = 0; j < lat->node_count(i); ++j) w.at(i, j)(0) = lat->w_value(i, j);

    for (int i = 0; i <= 6; ++i) {
        const double mean = expectation(w, i, [](Eigen::Ref<const Vec> v) { return v(0); });
        const double second =
            expectation(w, i, [](Eigen::Ref<const Vec> v) { return v(0) * v(0); });
        CHECK(std::abs(mean) <= 1e-15); // exact up to summation round-off
        CHECK(second == doctest::Approx(lat->grid().time(i)).epsilon(1e-14));
        double psum = 0.0;
        for (int j = 0; j < lat->node_count(i); ++j) psum += lat->node_prob(i);
        CHECK(psum == 1.0); // dyadic weights sum exactly
    }
}

TEST_CASE("expect_next is the child mean") {
    auto lat = tree(1.0, 2);
    AdaptedProcess p(lat, 1, 2);
    p.at(1, 0)(0) = 2.0;
    p.at(1, 1)(0) = 4.0;
    CHECK(expect_next(p, 0, 0)(0) == doctest::Approx(3.0));

    AdaptedProcess q(lat, 2, 1);
    q.at(1, 0) = Vec::Zero(2);
    q.at(1, 1) = Vec::Zero(2);
    q.at(1, 0)(0) = 1.0;
    q.at(1, 1)(1) = 1.0;
    const Vec m = expect_next(q, 0, 0);
    CHECK(m(0) == doctest::Approx(0.5));
    CHECK(m(1) == doctest::Approx(0.5));

    CHECK_THROWS_AS(expect_next(p, 2, 0), ValidationError);
}

TEST_CASE("extract_martingale recovers affine integrands exactly") {
    auto lat = tree(1.0, 4);
    const double dt = lat->grid().dt;
    const double sdt = std::sqrt(dt);
    AdaptedProcess p(lat, 1, 4);
    // X_{i+1} = a + b dW from each parent.
    const double a = 0.7, b = -1.3;
    for (int j = 0; j < lat->node_count(1); ++j)
        p.at(1, j)(0) = a + b * (j == 0 ? sdt : -sdt);
    CHECK(extract_martingale(p, 0, 0, dt)(0) == doctest::Approx(b).epsilon(1e-14));

    // Constant payoff has zero integrand.
    p.at(1, 0)(0) = 5.0;
    p.at(1, 1)(0) = 5.0;
    CHECK(extract_martingale(p, 0, 0, dt)(0) == doctest::Approx(0.0).scale(1));

    // Hand evaluation: dt = 0.25, up = 3, down = 1 -> (3-1)/(2*0.5) = 2.
    auto lat4 = tree(1.0, 4);
    AdaptedProcess r(lat4, 1, 1);
    r.at(1, 0)(0) = 3.0;
    r.at(1, 1)(0) = 1.0;
    CHECK(extract_martingale(r, 0, 0, 0.25)(0) == doctest::Approx(2.0));

    CHECK_THROWS_AS(extract_martingale(p, 0, 0, 0.0), ValidationError);
}

TEST_CASE("tower property holds exactly") {
    auto lat = tree(1.0, 8);
    AdaptedProcess p(lat, 1, 8);
    // Deterministic pattern, same order of magnitude across nodes.
    for (int j = 0; j < lat->node_count(8); ++j) p.at(8, j)(0) = std::sin(0.37 * j) + 0.25;
    for (int i = 7; i >= 0; --i)
        for (int j = 0; j < lat->node_count(i); ++j) p.at(i, j) = expect_next(p, i, j);

    for (int i = 0; i < 8; ++i) {
        AdaptedProcess cond(lat, 1, i);
        for (int j = 0; j < lat->node_count(i); ++j) cond.at(i, j) = expect_next(p, i, j);
        const double a = expectation(cond, i, [](Eigen::Ref<const Vec> v) { return v(0); });
        const double b = expectation(p, i + 1, [](Eigen::Ref<const Vec> v) { return v(0); });
        CHECK(a == doctest::Approx(b).epsilon(1e-15));
    }
}

TEST_CASE("affine reconstruction reproduces both children") {
    auto lat = tree(1.0, 3);
    const double dt = lat->grid().dt;
    const double sdt = std::sqrt(dt);
    AdaptedProcess p(lat, 1, 1);
    p.at(1, 0)(0) = 2.5; // up
    p.at(1, 1)(0) = 0.5; // down
    const double z = extract_martingale(p, 0, 0, dt)(0);
    const double mean = expect_next(p, 0, 0)(0);
    CHECK(mean + z * sdt == doctest::Approx(p.at(1, 0)(0)).epsilon(1e-15));
    CHECK(mean - z * sdt == doctest::Approx(p.at(1, 1)(0)).epsilon(1e-15));
}

TEST_CASE("deterministic lattice is a single-path chain") {
    auto lat = chain(1.0, 4);
    for (int i = 0; i <= 4; ++i) {
        CHECK(lat->node_count(i) == 1);
        CHECK(lat->w_value(i, 0) == 0.0);
        CHECK(lat->node_prob(i) == 1.0);
    }
    AdaptedProcess p(lat, 1, 4);
    p.at(1, 0)(0) = 42.0;
    CHECK(expect_next(p, 0, 0)(0) == 42.0);
    CHECK(extract_martingale(p, 0, 0, lat->grid().dt)(0) == 0.0);
    CHECK(expectation(p, 1, [](Eigen::Ref<const Vec> v) { return v(0) * 2.0; }) == 84.0);
}

TEST_CASE("m2 norm: quadrature and zero element") {
    GelfandTriple triple = GelfandTriple::identity(1);

    auto lat = tree(1.0, 3);
    TripleProcess zero = TripleProcess::zero(lat, 1);
    CHECK(m2_norm_sq(zero, triple) == 0.0);

    // Constant k = 1, y = 0, z = 0 over T = 1 integrates to 1.
    TripleProcess lam = TripleProcess::zero(lat, 1);
    for (int i = 0; i <= 3; ++i)
        for (int j = 0; j < lat->node_count(i); ++j) lam.k.at(i, j)(0) = 1.0;
    CHECK(m2_norm_sq(lam, triple) == doctest::Approx(1.0).epsilon(1e-14));

    // k = 1, y = 2, z = 3 over T = 2: 2 (1 + 4 + 9) = 28.
    auto lat2 = tree(2.0, 4);
    TripleProcess lam2 = TripleProcess::zero(lat2, 1);
    for (int i = 0; i <= 4; ++i)
        for (int j = 0; j < lat2->node_count(i); ++j) {
            lam2.k.at(i, j)(0) = 1.0;
            lam2.y.at(i, j)(0) = 2.0;
            if (i < 4) lam2.z.at(i, j)(0) = 3.0;
        }
    CHECK(m2_norm_sq(lam2, triple) == doctest::Approx(28.0).epsilon(1e-14));

    // Chain mode agrees with the tree on constants.
    auto lat2c = chain(2.0, 4);
    TripleProcess lam2c = TripleProcess::zero(lat2c, 1);
    for (int i = 0; i <= 4; ++i) {
        lam2c.k.at(i, 0)(0) = 1.0;
        lam2c.y.at(i, 0)(0) = 2.0;
        if (i < 4) lam2c.z.at(i, 0)(0) = 3.0;
    }
    CHECK(m2_norm_sq(lam2c, triple) == doctest::Approx(28.0).epsilon(1e-14));
}

TEST_CASE("triple process level coverage is enforced") {
    auto lat = tree(1.0, 2);
    CHECK_THROWS_AS(TripleProcess(AdaptedProcess(lat, 1, 1), AdaptedProcess(lat, 1, 2),
                                  AdaptedProcess(lat, 1, 1)),
                    ValidationError);
}
