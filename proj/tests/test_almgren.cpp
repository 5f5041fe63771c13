#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "yamabe/almgren.hpp"

using namespace yamabe;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

// Homogeneous polynomials with exact gradients.
LocalField linear_x1(int m) {
    return LocalField::analytic(m, 1, [m](const Vec& x, Vec& v, Mat& g) {
        v = Vec::Constant(1, x[0]);
        g = Mat::Zero(1, m);
        g(0, 0) = 1;
    });
}

LocalField saddle(int m) {
    return LocalField::analytic(m, 1, [m](const Vec& x, Vec& v, Mat& g) {
        v = Vec::Constant(1, x[0] * x[1]);
        g = Mat::Zero(1, m);
        g(0, 0) = x[1];
        g(0, 1) = x[0];
    });
}

// A(x) = Id + eps * (x_1 E_12 + x_2 E_21 + |x|^2 Id), A(0) = Id.
CoefficientField wobbly(int m, double eps, double radius = 0.5) {
    return CoefficientField::make(
        m,
        [m, eps](const Vec& x) {
            Mat A = Mat::Identity(m, m) * (1 + eps * x.squaredNorm());
            A(0, 1) += eps * (x[0] + x[1]);
            A(1, 0) += eps * (x[0] + x[1]);
            return A;
        },
        radius);
}

double sphere_area(int m) { return 2 * std::pow(std::numbers::pi, m / 2.0) / std::tgamma(m / 2.0); }

}  // namespace

TEST_CASE("mu and field construction") {
    Mat M(2, 2);
    M << 1, 0, 0, 4;
    const auto f = CoefficientField::constant(M);
    CHECK(f.theta == Approx(1.0));
    CHECK(f.Theta == Approx(4.0));
    CHECK(f.da_bound == 0.0);
    Vec x(2);
    x << 3, 4;
    CHECK(mu(f, x) == Approx((9 * 1 + 16 * 4) / 25.0).epsilon(1e-15));
    CHECK(mu(CoefficientField::identity(3), Vec::Ones(3)) == Approx(1.0));
    CHECK_THROWS_AS(mu(f, Vec::Zero(2)), DomainError);
    Mat bad(2, 2);
    bad << 1, 2, 2, 1;
    CHECK_THROWS_WITH(CoefficientField::constant(bad), ContainsSubstring("not positive definite"));
    Mat skew(2, 2);
    skew << 1, 0.5, 0, 1;
    CHECK_THROWS_WITH(CoefficientField::constant(skew), ContainsSubstring("not symmetric"));
    const auto w = wobbly(3, 0.2);
    // d_1 A = 0.2 [[2 x_1, 1], [1, 2 x_1]] (+ 0.4 x_1 on the third diagonal entry), largest near |x| = 0.5
    CHECK(w.da_bound == Approx(0.2 * 2).margin(0.03));
}

TEST_CASE("quadrature rules") {
    for (int m : {2, 3}) {
        const auto s = detail::sphere_rule(m, 64);
        double tot = 0, x2 = 0;
        for (std::size_t j = 0; j < s.nodes.size(); ++j) {
            tot += s.weights[j];
            x2 += s.weights[j] * s.nodes[j][0] * s.nodes[j][0];
        }
        CHECK(tot == Approx(sphere_area(m)).epsilon(1e-13));
        CHECK(x2 == Approx(sphere_area(m) / m).epsilon(1e-12));
    }
    CHECK_THROWS_AS(detail::sphere_rule(4, 64), DomainError);
    const auto r = geometric_radii(0.01, 1.0, 10);
    CHECK(r.size() == 21);
    CHECK(r.front() == Approx(0.01));
    CHECK(r.back() == Approx(1.0));
    CHECK(r[10] == Approx(0.1));
    CHECK_THROWS_AS(geometric_radii(0.5, 0.1), DomainError);
}

TEST_CASE("coefficient bounds near the center") {
    for (int m : {2, 3}) {
        const auto id = coefficient_bounds(CoefficientField::identity(m), {0.01, 0.1, 0.5});
        CHECK(id.all_ok());
        for (const auto& it : id.items) CHECK(it.worst <= 1e-6);
        const auto rep = coefficient_bounds(wobbly(m, 0.3), geometric_radii(0.01, 0.4, 6));
        for (const auto& it : rep.items) {
            INFO("item " << it.item << " " << it.quantity << " ratio " << it.worst_ratio);
            CHECK(it.ok);
            CHECK(it.worst_ratio <= 1.0);
        }
    }
    Mat M(2, 2);
    M << 2, 0, 0, 1;
    CHECK_THROWS_AS(coefficient_bounds(CoefficientField::constant(M), {0.1}), PreconditionError);
}

TEST_CASE("recentering normalizes the coefficients") {
    Mat M(3, 3);
    M << 2, 0.3, 0, 0.3, 1, 0.1, 0, 0.1, 3;
    const auto f = CoefficientField::make(
        3, [M](const Vec& x) { return Mat(M * (1 + 0.1 * x[2])); }, 1.0);
    Vec x0(3);
    x0 << 0.1, -0.2, 0.05;
    const auto rc = recenter(f, x0);
    CHECK((rc.field.A(Vec::Zero(3)) - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-14);
    CHECK((rc.chart.S * rc.chart.S - f.A(x0)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK((rc.chart.S * rc.chart.S_inv - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-13);
    // a second recentering at the origin is the identity
    const auto again = recenter(rc.field, Vec::Zero(3));
    CHECK((again.chart.S - Mat::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(again.field.radius == Approx(rc.field.radius).epsilon(1e-12));
    Vec y(3);
    y << 0.2, 0.1, -0.3;
    CHECK((again.field.A(y) - rc.field.A(y)).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK_THROWS_AS(recenter(f, Vec::Constant(3, 2.0)), DomainError);
    CHECK_THROWS_AS(recenter(f, Vec::Zero(2)), ShapeError);
}

TEST_CASE("homogeneous harmonics have constant frequency") {
    for (int m : {2, 3}) {
        const auto radii = geometric_radii(0.01, 0.5, 8);
        const auto t1 = almgren_trace(linear_x1(m), CoefficientField::identity(m), {}, Vec::Zero(m), radii);
        const auto t2 = almgren_trace(saddle(m), CoefficientField::identity(m), {}, Vec::Zero(m), radii);
        REQUIRE(t1.size() == radii.size());
        for (std::size_t k = 0; k < radii.size(); ++k) {
            CHECK(t1.N[k] == Approx(1.0).epsilon(1e-10));
            CHECK(t2.N[k] == Approx(2.0).epsilon(1e-10));
            // H(r) = int_{S^{m-1}} u(r w)^2
            CHECK(t1.H[k] == Approx(radii[k] * radii[k] * sphere_area(m) / m).epsilon(1e-10));
            CHECK(t1.E[k] == Approx(radii[k] * radii[k] * sphere_area(m) / m).epsilon(1e-10));
            CHECK(t1.H_ellipsoid[k] == Approx(t1.H[k]).epsilon(1e-10));
        }
        const auto mono = monotonicity_check(t2);
        CHECK(mono.C_fit == 0.0);
        CHECK(mono.doubling_sup <= 1e-6);
        CHECK(mono.doubling_ok);
    }
}

TEST_CASE("constant coefficients after recentering") {
    Mat M(2, 2);
    M << 1, 0, 0, 4;
    const auto f = CoefficientField::constant(M, 2.0);
    // v(x) = u(S x) = 2 x_1 x_2 is a degree-2 harmonic in the recentered frame
    const auto t = almgren_trace(saddle(2), f, {}, Vec::Zero(2), geometric_radii(0.02, 0.8, 8));
    for (std::size_t k = 0; k < t.size(); ++k) {
        CHECK(t.N[k] == Approx(2.0).epsilon(1e-10));
        CHECK(t.H_ellipsoid[k] == Approx(t.H[k]).epsilon(1e-10));
    }
}

TEST_CASE("ellipsoid route agrees for variable coefficients") {
    const auto f = wobbly(3, 0.4, 0.9);
    Vec x0(3);
    x0 << 0.05, 0.1, -0.1;
    const auto t = almgren_trace(saddle(3), f, {}, x0, geometric_radii(0.01, 0.3, 6));
    for (std::size_t k = 0; k < t.size(); ++k) CHECK(t.H_ellipsoid[k] == Approx(t.H[k]).epsilon(1e-8));
    CHECK_THROWS_AS(almgren_trace(saddle(3), f, {}, x0, {0.1, 0.05}), DomainError);
    CHECK_THROWS_AS(almgren_trace(saddle(3), f, {}, x0, {5.0}), DomainError);
    CHECK_THROWS_AS(almgren_trace(saddle(2), f, {}, x0, {0.1}), ShapeError);
}

TEST_CASE("vanishing H truncates the trace") {
    const auto zero = LocalField::analytic(2, 1, [](const Vec&, Vec& v, Mat& g) {
        v = Vec::Zero(1);
        g = Mat::Zero(1, 2);
    });
    const auto t = almgren_trace(zero, CoefficientField::identity(2), {}, Vec::Zero(2), {0.1, 0.2});
    CHECK(t.truncated);
    CHECK(t.size() == 0);
    CHECK_THAT(t.flag, ContainsSubstring("H vanished"));
}

TEST_CASE("monotonicity constant on a synthetic trace") {
    AlmgrenTrace t;
    for (int k = 0; k < 20; ++k) {
        const double r = 0.01 * std::pow(1.2, k);
        t.radii.push_back(r);
        t.N.push_back(2 - 3 * r);  // e^{Cr}(3 - 3r) is nondecreasing for C >= 1/(1 - r)
        t.H.push_back(std::pow(r, 4));
        t.E.push_back(t.N.back() * t.H.back());
    }
    const auto rep = monotonicity_check(t);
    CHECK(rep.within_cap);
    CHECK(rep.C_fit > 1.0);
    CHECK(rep.C_fit <= 1.0 / (1 - t.radii.back()) + 1e-6);
    CHECK(detail::monotone_failures(t, rep.C_fit, 1e-6).empty());
    CHECK_FALSE(detail::monotone_failures(t, 0.5 * rep.C_fit, 1e-6).empty());
    AlmgrenTrace shortt = t;
    shortt.radii.resize(5);
    CHECK_THROWS_AS(monotonicity_check(shortt), InsufficientDataError);
}

TEST_CASE("Pohozaev identity") {
    for (int m : {2, 3}) {
        const auto rep = pohozaev_residual(saddle(m), CoefficientField::identity(m), {}, 0.4);
        CHECK(rep.relative() <= 1e-6);
    }
    // -div(A grad x_1) = -2 x_1 for A = (1 + |x|^2) Id
    const int m = 3;
    const auto f = CoefficientField::make(m, [](const Vec& x) { return Mat(Mat::Identity(3, 3) * (1 + x.squaredNorm())); }, 1.0);
    const Reaction react = [](const Vec& x, int, double) { return -2 * x[0]; };
    const auto ok = pohozaev_residual(linear_x1(m), f, react, 0.5);
    CHECK(ok.relative() <= 1e-6);
    const auto wrong = pohozaev_residual(linear_x1(m), f, {}, 0.5);
    CHECK(wrong.relative() > 1e-2);
}

TEST_CASE("latitude charts") {
    const auto mesh = build_biaxial_sphere(3, 401);
    FieldTuple u(mesh.size(), 2);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        u.values(k, 0) = std::cos(mesh.t[k]);
        u.values(k, 1) = std::sin(mesh.t[k]);
    }
    CHECK(profile_crossing(mesh, u) == Approx(std::numbers::pi / 4).epsilon(1e-12));
    const auto pc = latitude_chart(mesh, u, std::numbers::pi / 4);
    const Mat A0 = pc.field.A(Vec::Zero(3));
    CHECK(A0(0, 0) == Approx(0.5));
    CHECK(A0(1, 1) == Approx(1.0));
    CHECK(A0(2, 2) == Approx(1.0));
    CHECK(pc.field.radius == Approx(0.95 * std::numbers::pi / 4));
    Vec x(3);
    x << 0.1, 0.3, -0.2;
    CHECK(pc.u.value(x)[0] == Approx(std::cos(std::numbers::pi / 4 + 0.1)).epsilon(1e-7));

    // the constant solution makes the reaction vanish
    FieldTuple c(mesh.size(), 2);
    c.values.setConstant(std::pow(kappa(3) * mesh.curvature.front(), 0.25));
    const auto pcc = latitude_chart(mesh, c, 0.5);
    CHECK(std::abs(pcc.f(x, 0, c.values(0, 0))) <= 1e-14);

    CHECK_THROWS_AS(latitude_chart(build_round_sphere(3, 64), u, 0.5), DomainError);
    CHECK_THROWS_AS(latitude_chart(mesh, u, 2.0), DomainError);
    CHECK_THROWS_AS(latitude_chart(build_biaxial_sphere(4, 64, 3), FieldTuple(64, 2), 0.5), DomainError);
    FieldTuple same(mesh.size(), 2);
    same.values.setOnes();
    same.component(1) *= 0.5;
    CHECK_THROWS_AS(profile_crossing(mesh, same), DegeneratePartitionError);
}
