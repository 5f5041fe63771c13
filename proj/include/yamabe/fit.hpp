#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/tools/minima.hpp>

#include "yamabe/error.hpp"

namespace yamabe {

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double rms = 0.0;
    double max_abs_residual = 0.0;
};

inline LinearFit linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (n < 2 || y.size() != n) throw InsufficientDataError("linear_fit needs at least two points");
    double sx = 0, sy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sx += x[i];
        sy += y[i];
    }
    const double mx = sx / n, my = sy / n;
    double sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0) throw InsufficientDataError("linear_fit: abscissae are all equal");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double r = y[i] - (f.slope * x[i] + f.intercept);
        ss += r * r;
        f.max_abs_residual = std::max(f.max_abs_residual, std::abs(r));
    }
    f.rms = std::sqrt(ss / n);
    return f;
}

// Fit y(d) ~ A*phi1(d; e) + B*phi2(d; e) in the relative least-squares sense, scanning the exponent e.
struct ExponentFit {
    double exponent = 0.0;
    double a = 0.0;
    double b = 0.0;
    double rms = std::numeric_limits<double>::infinity();
};

using Basis = std::function<double(double d, double e)>;

inline ExponentFit fit_exponent(const std::vector<double>& d, const std::vector<double>& y, Basis phi1, Basis phi2,
                                double e_lo, double e_hi) {
    const std::size_t n = d.size();
    if (n < 3 || y.size() != n) throw InsufficientDataError("exponent fit needs at least three samples");
    auto solve = [&](double e, double* a, double* b) {
        Eigen::MatrixXd X(n, 2);
        Eigen::VectorXd t = Eigen::VectorXd::Ones(n);
        for (std::size_t k = 0; k < n; ++k) {
            X(k, 0) = phi1(d[k], e) / y[k];
            X(k, 1) = phi2(d[k], e) / y[k];
        }
        Eigen::Vector2d c = X.colPivHouseholderQr().solve(t);
        if (a) *a = c[0];
        if (b) *b = c[1];
        return std::sqrt((X * c - t).squaredNorm() / n);
    };
    const int grid = 400;
    double best_e = e_lo, best_r = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= grid; ++k) {
        const double e = e_lo + (e_hi - e_lo) * k / grid;
        const double r = solve(e, nullptr, nullptr);
        if (r < best_r) {
            best_r = r;
            best_e = e;
        }
    }
    const double step = (e_hi - e_lo) / grid;
    auto res = boost::math::tools::brent_find_minima([&](double e) { return solve(e, nullptr, nullptr); },
                                                     std::max(e_lo, best_e - step), std::min(e_hi, best_e + step), 50);
    ExponentFit f;
    f.exponent = res.first;
    f.rms = solve(f.exponent, &f.a, &f.b);
    return f;
}

// Two power channels: y ~ A d^e + B d^q with q fixed.
inline ExponentFit fit_two_channel(const std::vector<double>& d, const std::vector<double>& y, double q, double e_lo,
                                   double e_hi) {
    return fit_exponent(
        d, y, [](double x, double e) { return std::pow(x, e); }, [q](double x, double) { return std::pow(x, q); },
        e_lo, e_hi);
}

// Critical channel: y ~ d^e (A |ln d| + B).
inline ExponentFit fit_log_channel(const std::vector<double>& d, const std::vector<double>& y, double e_lo,
                                   double e_hi) {
    return fit_exponent(
        d, y, [](double x, double e) { return std::pow(x, e) * std::abs(std::log(x)); },
        [](double x, double e) { return std::pow(x, e); }, e_lo, e_hi);
}

}  // namespace yamabe
