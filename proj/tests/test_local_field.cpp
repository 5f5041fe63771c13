#include <catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "yamabe/local_field.hpp"

using namespace yamabe;
using Catch::Approx;

namespace {

Vec quadratic(const Vec& x) {
    Vec v(2);
    v[0] = 1 + 2 * x[0] - x[1] + 0.5 * x[0] * x[0] + 3 * x[0] * x[1] - x[1] * x[1];
    v[1] = x[0] * x[1] - 4 * x[1];
    if (x.size() == 3) {
        v[0] += x[2] * x[2] - x[0] * x[2];
        v[1] += 2 * x[2];
    }
    return v;
}

Mat quadratic_grad(const Vec& x) {
    Mat g = Mat::Zero(2, x.size());
    g(0, 0) = 2 + x[0] + 3 * x[1];
    g(0, 1) = -1 + 3 * x[0] - 2 * x[1];
    g(1, 0) = x[1];
    g(1, 1) = x[0] - 4;
    if (x.size() == 3) {
        g(0, 0) -= x[2];
        g(0, 2) = 2 * x[2] - x[0];
        g(1, 2) = 2;
    }
    return g;
}

}  // namespace

TEST_CASE("quadratics are reproduced up to the boundary") {
    std::mt19937 rng(4);
    for (int m : {2, 3}) {
        const auto g = GridField::centered(m, 2, 1.0, 8, quadratic);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (int trial = 0; trial < 200; ++trial) {
            Vec x(m);
            for (int d = 0; d < m; ++d) x[d] = u(rng);
            if (trial < 2 * m) x[trial % m] = trial < m ? -1.0 : 1.0;
            Vec v;
            Mat grad;
            interpolate(g, x, v, grad);
            CHECK((v - quadratic(x)).cwiseAbs().maxCoeff() <= 1e-12);
            CHECK((grad - quadratic_grad(x)).cwiseAbs().maxCoeff() <= 1e-11);
        }
    }
}

TEST_CASE("interpolant passes through the samples") {
    const auto g = GridField::centered(2, 1, 1.0, 10, [](const Vec& x) { return Vec::Constant(1, std::sin(3 * x[0]) * std::exp(x[1])); });
    for (std::size_t k = 0; k < g.nodes(); k += 7) {
        Vec v;
        Mat grad;
        interpolate(g, g.node(k), v, grad);
        CHECK(v[0] == Approx(g.values(k, 0)).margin(1e-13));
    }
    CHECK(g.hi()[0] == Approx(1.0));
}

TEST_CASE("interpolation error is third order") {
    auto f = [](const Vec& x) { return Vec::Constant(1, std::sin(2 * x[0] + x[1]) + std::cos(x[0] * x[1])); };
    std::vector<double> err;
    for (int cells : {8, 16, 32, 64}) {
        const auto g = GridField::centered(2, 1, 1.0, cells, f);
        double e = 0;
        for (double a = -0.93; a < 0.95; a += 0.071)
            for (double b = -0.91; b < 0.95; b += 0.083) {
                Vec x(2);
                x << a, b;
                Vec v;
                Mat grad;
                interpolate(g, x, v, grad);
                e = std::max(e, std::abs(v[0] - f(x)[0]));
            }
        err.push_back(e);
    }
    for (std::size_t k = 1; k < err.size(); ++k) {
        INFO(err[k - 1] << " -> " << err[k]);
        CHECK(std::log2(err[k - 1] / err[k]) >= 2.7);
    }
}

TEST_CASE("gradient is the derivative of the interpolant") {
    const auto g = GridField::centered(3, 1, 1.0, 6, [](const Vec& x) { return Vec::Constant(1, std::exp(x[0] - x[1] * x[2])); });
    Vec x(3);
    x << 0.123, -0.456, 0.789;
    Vec v;
    Mat grad;
    interpolate(g, x, v, grad);
    for (int d = 0; d < 3; ++d) {
        const double h = 1e-6;
        Vec xp = x, xm = x, vp, vm;
        xp[d] += h;
        xm[d] -= h;
        Mat tmp;
        interpolate(g, xp, vp, tmp);
        interpolate(g, xm, vm, tmp);
        CHECK(grad(0, d) == Approx((vp[0] - vm[0]) / (2 * h)).epsilon(1e-7));
    }
}

TEST_CASE("pull-back follows the chain rule") {
    const auto u = LocalField::analytic(2, 2, [](const Vec& x, Vec& v, Mat& g) {
        v = quadratic(x);
        g = quadratic_grad(x);
    });
    Vec x0(2);
    x0 << 0.3, -0.2;
    Mat S(2, 2);
    S << 0.5, 0.2, -0.1, 0.7;
    const auto v = pulled_back(u, x0, S);
    Vec y(2);
    y << 0.4, 0.9;
    Vec val;
    Mat grad;
    v.eval(y, val, grad);
    CHECK((val - quadratic(x0 + S * y)).norm() <= 1e-14);
    CHECK((grad - quadratic_grad(x0 + S * y) * S).norm() <= 1e-13);
    const auto fg = LocalField::from_grid(GridField::centered(2, 2, 1.0, 8, quadratic));
    CHECK((fg.value(y) - quadratic(y)).norm() <= 1e-12);
}

TEST_CASE("grid errors") {
    auto one = [](const Vec&) { return Vec::Ones(1); };
    CHECK_THROWS_AS(GridField::sample(2, 1, Vec::Zero(3), 0.1, {5, 5}, one), ShapeError);
    CHECK_THROWS_AS(GridField::sample(2, 1, Vec::Zero(2), 0.1, {3, 5}, one), ShapeError);
    CHECK_THROWS_AS(GridField::sample(1, 2, Vec::Zero(1), 0.1, {5}, one), ShapeError);
    const auto g = GridField::centered(2, 1, 1.0, 4, one);
    Vec v;
    Mat grad;
    CHECK_THROWS_AS(interpolate(g, Vec::Constant(2, 1.5), v, grad), DomainError);
    CHECK_THROWS_AS(interpolate(g, Vec::Zero(3), v, grad), ShapeError);
}
