#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "yamabe/error.hpp"

namespace yamabe {

struct QuadResult {
    double value = 0.0;
    double error = 0.0;
    double l1 = 0.0;
};

struct QuadOptions {
    std::vector<double> breakpoints;  // interior split points, any order
    double rel_tol = 1e-12;
    double abs_tol = 1e-12;
    unsigned max_depth = 18;
};

namespace detail {

inline std::string fmt_g(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.3g", v);
    return buf;
}

// Boost 1.74 compares the unscaled local error with a scaled tolerance, which makes short intervals
// recurse to the depth limit; feeding it the reference interval [-1, 1] sidesteps that.
template <class F>
QuadResult gk_segment(F&& f, double a, double b, const QuadOptions& opt) {
    QuadResult r;
    if (!(b > a)) return r;
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    auto g = [&](double t) { return f(c + h * t); };
    try {
        r.value = boost::math::quadrature::gauss_kronrod<double, 31>::integrate(g, -1.0, 1.0, opt.max_depth,
                                                                                opt.rel_tol, &r.error, &r.l1);
    } catch (const std::exception& e) {
        throw IntegrabilityError(std::string("quadrature failed on segment: ") + e.what());
    }
    r.value *= h;
    r.error *= h;
    r.l1 *= h;
    if (!std::isfinite(r.value) || !std::isfinite(r.error))
        throw IntegrabilityError("quadrature produced a non-finite value");
    return r;
}

inline std::vector<double> split_points(double a, double b, std::vector<double> pts) {
    std::vector<double> out{a};
    std::sort(pts.begin(), pts.end());
    for (double p : pts)
        if (p > out.back() && p < b) out.push_back(p);
    return out;
}

}  // namespace detail

// Adaptive Gauss-Kronrod on [a, b]; b may be +inf.
template <class F>
QuadResult integrate(F&& f, double a, double b, const QuadOptions& opt = {}) {
    const bool infinite = std::isinf(b);
    auto knots = detail::split_points(a, infinite ? std::numeric_limits<double>::max() : b,
                                      opt.breakpoints);
    QuadResult total;
    auto add = [&](const QuadResult& q) {
        total.value += q.value;
        total.error += q.error;
        total.l1 += q.l1;
    };
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) add(detail::gk_segment(f, knots[k], knots[k + 1], opt));
    if (infinite) {
        // r = r0 / s maps (0, 1] onto [r0, inf) without the cancellation tan(t) suffers near pi/2
        const double r0 = knots.back() > 0 ? knots.back() : 1.0;
        if (knots.back() <= 0) add(detail::gk_segment(f, knots.back(), r0, opt));
        auto g = [&](double s) { return f(r0 / s) * r0 / (s * s); };
        add(detail::gk_segment(g, 0.0, 1.0, opt));
    } else {
        add(detail::gk_segment(f, knots.back(), b, opt));
    }
    const double budget = std::max(opt.abs_tol, 1e-10 * std::abs(total.l1));
    if (total.error > budget)
        throw IntegrabilityError("quadrature did not converge (error estimate " + detail::fmt_g(total.error) +
                                 ", budget " + detail::fmt_g(budget) + ")");
    return total;
}

// Full Gauss-Legendre rule on [-1, 1] built from Boost's half-rule tables.
template <unsigned N>
void gauss_legendre(std::vector<double>& x, std::vector<double>& w) {
    using G = boost::math::quadrature::gauss<double, N>;
    const auto& ax = G::abscissa();
    const auto& wt = G::weights();
    x.clear();
    w.clear();
    for (std::size_t i = 0; i < ax.size(); ++i) {
        if (ax[i] == 0.0) {
            x.push_back(0.0);
            w.push_back(wt[i]);
        } else {
            x.push_back(ax[i]);
            w.push_back(wt[i]);
            x.push_back(-ax[i]);
            w.push_back(wt[i]);
        }
    }
}

}  // namespace yamabe
