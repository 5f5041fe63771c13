#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "yamabe/error.hpp"
#include "yamabe/fit.hpp"
#include "yamabe/quadrature.hpp"

namespace yamabe {

namespace detail {

inline double sphere_volume_any(int m) {
    double omega = 2.0;
    double w_prev = std::numbers::pi, w_cur = 2.0;  // int_0^pi sin^k for k = 0, 1
    for (int k = 0; k < m; ++k) {
        double wk;
        if (k == 0) {
            wk = std::numbers::pi;
        } else if (k == 1) {
            wk = 2.0;
        } else {
            wk = w_prev * (k - 1) / k;
            w_prev = w_cur;
            w_cur = wk;
        }
        omega *= wk;
    }
    return omega;
}

}  // namespace detail

// Volume of the unit m-sphere: omega_m = omega_{m-1} * int_0^pi sin^{m-1}, omega_0 = 2.
inline double sphere_volume(int m) {
    if (m < 1) throw DomainError("sphere_volume: m must be >= 1");
    return detail::sphere_volume_any(m);
}

inline double critical_exponent(int m) {
    if (m < 3) throw DomainError("critical exponent needs m >= 3");
    return 2.0 * m / (m - 2.0);
}

inline double kappa(int m) {
    if (m < 3) throw DomainError("conformal constant needs m >= 3");
    return (m - 2.0) / (4.0 * (m - 1.0));
}

inline double sobolev_constant(int m) {
    return m * (m - 2.0) / 4.0 * std::pow(sphere_volume(m), 2.0 / m);
}

struct ConstantsTable {
    int m = 0;
    double two_star = 0;
    double kappa = 0;
    double omega_m = 0;
    double omega_m_minus_1 = 0;
    double sigma_m = 0;
    double a_frak = 0;
    double b_frak = 0;
    std::optional<double> c_bar;
};

struct BubbleParams {
    int m = 3;
    double delta = 1.0;
    double r = 1.0;  // truncation radius; the cutoff is 1 on [0, r/2] and 0 beyond r

    double cutoff_inner() const { return r / 2; }
    void validate() const {
        if (m < 3) throw DomainError("bubble needs m >= 3");
        if (!(delta > 0)) throw DomainError("bubble: delta must be positive");
        if (!(r > 0)) throw DomainError("bubble: truncation radius must be positive");
    }
};

inline double bubble_eval(const BubbleParams& p, double radius) {
    if (radius < 0) throw DomainError("bubble_eval: radius must be >= 0");
    const double e = (p.m - 2.0) / 2.0;
    return std::pow(p.m * (p.m - 2.0), e / 2.0) * std::pow(p.delta / (p.delta * p.delta + radius * radius), e);
}

// dU/drho
inline double bubble_derivative(const BubbleParams& p, double radius) {
    return -(p.m - 2.0) * radius / (p.delta * p.delta + radius * radius) * bubble_eval(p, radius);
}

namespace detail {

inline double smooth_step_psi(double x) { return x > 0 ? std::exp(-1.0 / x) : 0.0; }

}  // namespace detail

// Smooth cutoff: 1 on [0, r/2], 0 on [r, inf). Returns value and derivative.
inline std::pair<double, double> cutoff(double rho, double r) {
    const double h = r / 2;
    if (rho <= h) return {1.0, 0.0};
    if (rho >= r) return {0.0, 0.0};
    const double x = 1.0 - (rho - h) / h;  // 1 at the inner edge, 0 at r
    const double p = detail::smooth_step_psi(x), q = detail::smooth_step_psi(1.0 - x);
    const double s = p + q;
    const double dp = p / (x * x);
    const double dq = q / ((1.0 - x) * (1.0 - x));
    const double ds_dx = (dp * q + p * dq) / (s * s);
    return {p / s, -ds_dx / h};
}

template <class F>
QuadResult radial_integral(F&& f, int m, double rmax, const QuadOptions& opt = {}) {
    if (m < 1) throw DomainError("radial_integral: dimension must be >= 1");
    if (!(rmax > 0)) throw DomainError("radial_integral: rmax must be positive");
    const double w = detail::sphere_volume_any(m - 1);
    auto g = [&](double r) {
        const double v = f(r);
        return v == 0.0 ? 0.0 : w * std::pow(r, m - 1) * v;
    };
    return integrate(g, 0.0, rmax, opt);
}

namespace detail {

inline QuadOptions bubble_quad(double delta) {
    QuadOptions o;
    for (double s = 0.01; s < 1e4; s *= 10) o.breakpoints.push_back(s * delta);
    return o;
}

}  // namespace detail

// Flux integral of U^{2*-1} over R^m.
inline double b_frak_quadrature(int m) {
    BubbleParams p{m, 1.0, 1.0};
    const double e = critical_exponent(m) - 1.0;
    return radial_integral([&](double r) { return std::pow(bubble_eval(p, r), e); }, m,
                           std::numeric_limits<double>::infinity(), detail::bubble_quad(1.0))
        .value;
}

struct BubbleNorms {
    double dirichlet = 0;   // int |grad U_delta|^2
    double critical = 0;    // int U_delta^{2*}
    double quotient = 0;    // dirichlet / critical^{2/2*}
};

inline BubbleNorms bubble_norms(int m, double delta) {
    BubbleParams p{m, delta, 1.0};
    const double ts = critical_exponent(m);
    const auto opt = detail::bubble_quad(delta);
    const double inf = std::numeric_limits<double>::infinity();
    BubbleNorms n;
    n.dirichlet = radial_integral([&](double r) { const double d = bubble_derivative(p, r); return d * d; }, m, inf,
                                  opt)
                      .value;
    n.critical = radial_integral([&](double r) { return std::pow(bubble_eval(p, r), ts); }, m, inf, opt).value;
    n.quotient = n.dirichlet / std::pow(n.critical, 2.0 / ts);
    return n;
}

inline std::optional<double> c_bar(int m) {
    if (m < 7) return std::nullopt;
    const double num = (m + 2.0) * std::pow(m * (m - 2.0), (m - 2.0) / 2.0);
    const double den = std::pow(2.0, m - 1) * (m - 6.0) * (m - 1.0);
    return num / den / 192.0 * sphere_volume(m) / sphere_volume(m - 1);
}

inline ConstantsTable constants(int m) {
    if (m < 3) throw DomainError("constants: m must be >= 3 (critical exponent undefined)");
    ConstantsTable t;
    t.m = m;
    t.two_star = critical_exponent(m);
    t.kappa = kappa(m);
    t.omega_m = sphere_volume(m);
    t.omega_m_minus_1 = sphere_volume(m - 1);
    t.sigma_m = m * (m - 2.0) / 4.0 * std::pow(t.omega_m, 2.0 / m);
    t.a_frak = (m - 2.0) * std::pow(m * (m - 2.0), (m - 2.0) / 4.0) * t.omega_m_minus_1;
    t.b_frak = b_frak_quadrature(m);
    t.c_bar = c_bar(m);
    return t;
}

// Coefficient k_m with a_m*u + (delta^4 Weyl channel) = a_m*(u - k_m |W|^2) at the balance delta^{(m-2)/2} = delta^4.
inline double weyl_balance_coefficient(int m) {
    auto cb = c_bar(m);
    if (!cb) throw DomainError("Weyl balance coefficient needs m >= 7");
    const double a = (m - 2.0) * std::pow(m * (m - 2.0), (m - 2.0) / 4.0) * sphere_volume(m - 1);
    const double bracket = 0.5 * (m - 2.0) * (m - 2.0) / (m + 2.0) - m * m / (m - 4.0) / critical_exponent(m);
    return -bracket * *cb * sphere_volume(m - 1) / a;
}

// ---- delta-scaling laws in the flat truncated model V = chi(|x|) U_delta(x) ----

enum class MomentRegime { Subcritical, Critical, Supercritical };

inline const char* regime_name(MomentRegime r) {
    switch (r) {
        case MomentRegime::Subcritical: return "gamma<m/2";
        case MomentRegime::Critical: return "gamma=m/2 (log)";
        case MomentRegime::Supercritical: return "gamma>m/2";
    }
    return "?";
}

struct MomentScaling {
    int m = 0;
    double alpha = 0;
    double gamma = 0;
    MomentRegime regime = MomentRegime::Subcritical;
    double expected_exponent = 0;
    double fitted_exponent = 0;
    double fit_rms = 0;
    bool log_factor_detected = false;
    double r_exponent = 0;        // exponent of R(delta)
    bool predicted_little_o = false;  // closed-form little-o condition
    bool fitted_little_o = false;
    std::vector<double> deltas;
    std::vector<double> values;
};

inline double truncated_bubble(const BubbleParams& p, double rho) {
    const double c = cutoff(rho, p.r).first;
    return c == 0.0 ? 0.0 : c * bubble_eval(p, rho);
}

inline double truncated_moment(int m, double alpha, double delta, double r = 1.0) {
    BubbleParams p{m, delta, r};
    p.validate();
    QuadOptions o;
    for (double s = 0.01 * delta; s < r / 2; s *= 10) o.breakpoints.push_back(s);
    o.breakpoints.push_back(r / 2);
    return radial_integral([&](double rho) { return std::pow(truncated_bubble(p, rho), alpha); }, m, r, o).value;
}

inline double r_exponent(int m) { return m < 6 ? m - 2.0 : 4.0; }

inline bool moment_little_o_condition(int m, double alpha) {
    if (m == 3) return alpha > 2 && alpha < 4;
    if (m >= 9) return alpha > 8.0 / (m - 2) && alpha < 2.0 * (m - 4) / (m - 2);
    return false;
}

inline MomentScaling moment_scaling(int m, double alpha, const std::vector<double>& deltas, double r = 1.0) {
    if (deltas.size() < 3) throw InsufficientDataError("moment_scaling needs at least 3 deltas");
    if (alpha < 1) throw DomainError("moment_scaling: alpha must be >= 1");
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        if (!(deltas[k] > 0)) throw DomainError("moment_scaling: deltas must be positive");
        if (k && !(deltas[k] < deltas[k - 1])) throw DomainError("moment_scaling: deltas must be decreasing");
    }
    MomentScaling s;
    s.m = m;
    s.alpha = alpha;
    s.gamma = (m - 2.0) * alpha / 2.0;
    s.deltas = deltas;
    for (double d : deltas) s.values.push_back(truncated_moment(m, alpha, d, r));

    const double half = m / 2.0;
    if (std::abs(s.gamma - half) <= 1e-12 * half) {
        s.regime = MomentRegime::Critical;
        s.expected_exponent = half;
    } else if (s.gamma < half) {
        s.regime = MomentRegime::Subcritical;
        s.expected_exponent = s.gamma;
    } else {
        s.regime = MomentRegime::Supercritical;
        s.expected_exponent = m - s.gamma;
    }

    std::vector<double> ld, li, lil;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        ld.push_back(std::log(deltas[k]));
        li.push_back(std::log(s.values[k]));
        lil.push_back(std::log(s.values[k] / std::abs(std::log(deltas[k]))));
    }
    const auto plain = linear_fit(ld, li);
    const auto logged = linear_fit(ld, lil);
    s.log_factor_detected = logged.rms < plain.rms;

    if (s.regime == MomentRegime::Critical) {
        s.fitted_exponent = fit_log_channel(deltas, s.values, plain.slope - 1.0, plain.slope + 1.0).exponent;
        s.fit_rms = fit_log_channel(deltas, s.values, plain.slope - 1.0, plain.slope + 1.0).rms;
    } else {
        // the other channel (core vs tail) is the competing correction
        const double q = std::max(s.gamma, m - s.gamma);
        const auto f = fit_two_channel(deltas, s.values, q, plain.slope - 1.0, q - 0.02);
        s.fitted_exponent = f.exponent;
        s.fit_rms = f.rms;
    }
    s.r_exponent = r_exponent(m);
    s.predicted_little_o = moment_little_o_condition(m, alpha);
    s.fitted_little_o = s.fitted_exponent > s.r_exponent;
    return s;
}

struct ExpansionFit {
    int m = 0;
    double exponent = 0;
    double coefficient = 0;
    double fit_rms = 0;
    bool extrapolation_warning = false;
    std::vector<double> deltas;
    std::vector<double> deficits;  // Q(delta) - sigma^{m/2}/m
};

// Q(delta) - sigma_m^{m/2}/m for the truncated bubble, computed from the truncation-induced differences
// so that no cancellation against sigma_m^{m/2} occurs.
inline double mountain_pass_deficit(int m, double delta, double r = 1.0) {
    BubbleParams p{m, delta, r};
    p.validate();
    const double ts = critical_exponent(m);
    const double h = r / 2;
    const double inf = std::numeric_limits<double>::infinity();
    QuadOptions o;
    o.breakpoints = {h, r};
    auto da = radial_integral(
        [&](double rho) {
            const auto [c, dc] = cutoff(rho, r);
            const double u = bubble_eval(p, rho), du = bubble_derivative(p, rho);
            const double g = dc * u + c * du;
            return g * g - du * du;
        },
        m, inf, o);
    auto db = radial_integral(
        [&](double rho) {
            const double c = cutoff(rho, r).first;
            return (std::pow(c, ts) - 1.0) * std::pow(bubble_eval(p, rho), ts);
        },
        m, inf, o);
    // both integrands vanish on [0, h]; the integrals above start at 0 but see zeros there
    const double S = std::pow(sobolev_constant(m), m / 2.0);
    const double expo = (m / 2.0) * std::log1p(da.value / S) - ((m - 2.0) / 2.0) * std::log1p(db.value / S);
    return S / m * std::expm1(expo);
}

inline ExpansionFit expansion_fit(int m, const std::vector<double>& deltas, double r = 1.0) {
    if (deltas.size() < 3) throw InsufficientDataError("expansion_fit needs at least 3 deltas");
    ExpansionFit f;
    f.m = m;
    f.deltas = deltas;
    for (double d : deltas) {
        if (d > r / 4) f.extrapolation_warning = true;
        f.deficits.push_back(mountain_pass_deficit(m, d, r));
    }
    std::vector<double> ld, ly;
    for (std::size_t k = 0; k < deltas.size(); ++k) {
        if (!(f.deficits[k] > 0)) throw NumericalError("expansion_fit: non-positive deficit");
        ld.push_back(std::log(deltas[k]));
        ly.push_back(std::log(f.deficits[k]));
    }
    const auto plain = linear_fit(ld, ly);
    const auto e = fit_two_channel(deltas, f.deficits, m, plain.slope - 1.0, m - 0.05);
    f.exponent = e.exponent;
    f.coefficient = e.a;
    f.fit_rms = e.rms;
    return f;
}

}  // namespace yamabe
