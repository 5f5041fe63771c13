#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "yamabe/constants.hpp"
#include "yamabe/error.hpp"
#include "yamabe/local_field.hpp"
#include "yamabe/mesh.hpp"
#include "yamabe/quadrature.hpp"

namespace yamabe {

// Divergence-form coefficients on the ball B_radius(0): symmetric positive definite A and a weight a.
struct CoefficientField {
    int m = 2;
    std::function<Mat(const Vec&)> A;
    std::function<double(const Vec&)> a;  // empty means 1
    double radius = 1.0;
    double theta = 1.0;
    double Theta = 1.0;
    double da_bound = 0.0;  // max_k sup ‖d_k A‖ (operator norm) over the samples; dominates every |d_k a_ij|

    Mat at(const Vec& x) const { return A(x); }
    double weight(const Vec& x) const { return a ? a(x) : 1.0; }

    static CoefficientField make(int m, std::function<Mat(const Vec&)> A, double radius,
                                 std::function<double(const Vec&)> a = {});

    static CoefficientField identity(int m, double radius = 1.0) {
        return make(m, [m](const Vec&) { return Mat::Identity(m, m); }, radius);
    }

    static CoefficientField constant(const Mat& M, double radius = 1.0) {
        return make(static_cast<int>(M.rows()), [M](const Vec&) { return M; }, radius);
    }
};

namespace detail {

// Deterministic points filling the ball, the center included.
inline std::vector<Vec> ball_samples(int m, double radius, int count, unsigned seed = 17) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> gauss;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Vec> pts{Vec::Zero(m)};
    for (int k = 0; k < count; ++k) {
        Vec d(m);
        for (int i = 0; i < m; ++i) d[i] = gauss(gen);
        d.normalize();
        pts.push_back(radius * std::pow(unif(gen), 1.0 / m) * d);
    }
    return pts;
}

inline std::vector<Vec> unit_directions(int m, int count, unsigned seed = 7) {
    std::vector<Vec> dirs;
    if (m == 1) return {Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)};
    if (m == 2) {
        for (int k = 0; k < count; ++k) {
            const double a = 2.0 * std::numbers::pi * (k + 0.5) / count;
            Vec d(2);
            d << std::cos(a), std::sin(a);
            dirs.push_back(d);
        }
        return dirs;
    }
    std::mt19937 gen(seed);
    std::normal_distribution<double> gauss;
    for (int k = 0; k < count; ++k) {
        Vec d(m);
        for (int i = 0; i < m; ++i) d[i] = gauss(gen);
        dirs.push_back(d.normalized());
    }
    return dirs;
}

inline double fd_step(const Vec& x) { return 1e-5 * std::max(1e-2, x.norm()); }

inline Mat partial_A(const CoefficientField& f, const Vec& x, int k) {
    const double h = fd_step(x);
    Vec xp = x, xm = x;
    xp[k] += h;
    xm[k] -= h;
    return (f.A(xp) - f.A(xm)) / (2.0 * h);
}

// J(j, h) = d V_j / d x_h by central differences.
inline Mat jacobian(const std::function<Vec(const Vec&)>& V, const Vec& x) {
    const int m = static_cast<int>(x.size());
    const double h = fd_step(x);
    Mat J(m, m);
    for (int k = 0; k < m; ++k) {
        Vec xp = x, xm = x;
        xp[k] += h;
        xm[k] -= h;
        J.col(k) = (V(xp) - V(xm)) / (2.0 * h);
    }
    return J;
}

inline void check_spd(const Mat& A, const char* what) {
    const double scale = std::max(1.0, A.cwiseAbs().maxCoeff());
    if ((A - A.transpose()).cwiseAbs().maxCoeff() > 1e-12 * scale)
        throw DomainError(std::string(what) + " is not symmetric");
    Eigen::SelfAdjointEigenSolver<Mat> es(A, Eigen::EigenvaluesOnly);
    if (!(es.eigenvalues().minCoeff() > 0)) throw DomainError(std::string(what) + " is not positive definite");
}

}  // namespace detail

inline CoefficientField CoefficientField::make(int m, std::function<Mat(const Vec&)> A, double radius,
                                               std::function<double(const Vec&)> a) {
    if (m < 1) throw DomainError("coefficient field needs m >= 1");
    if (!(radius > 0)) throw DomainError("coefficient field needs a positive radius");
    CoefficientField f;
    f.m = m;
    f.A = std::move(A);
    f.a = std::move(a);
    f.radius = radius;
    f.theta = std::numeric_limits<double>::infinity();
    f.Theta = 0.0;
    f.da_bound = 0.0;
    for (const Vec& x : detail::ball_samples(m, radius, 256)) {
        const Mat M = f.A(x);
        if (M.rows() != m || M.cols() != m) throw ShapeError("coefficient matrix has the wrong size");
        detail::check_spd(M, "coefficient matrix");
        Eigen::SelfAdjointEigenSolver<Mat> es(M, Eigen::EigenvaluesOnly);
        f.theta = std::min(f.theta, es.eigenvalues().minCoeff());
        f.Theta = std::max(f.Theta, es.eigenvalues().maxCoeff());
        for (int k = 0; k < m; ++k) f.da_bound = std::max(f.da_bound, detail::partial_A(f, x, k).operatorNorm());
    }
    return f;
}

inline double mu(const CoefficientField& f, const Vec& x) {
    const double r = x.norm();
    if (r == 0.0) throw DomainError("mu is undefined at the center");
    const Vec e = x / r;
    return e.dot(f.A(x) * e);
}

// ---------------------------------------------------------------------------------------------
// Coefficient estimates near the center, for fields with A(0) = Id.

struct BoundItem {
    int item = 0;
    std::string quantity;
    double worst = 0.0;        // sup of the measured quantity
    double worst_ratio = 0.0;  // sup of measured / bound
    bool ok = true;
};

struct CoefficientReport {
    double da_bound = 0.0;
    std::vector<BoundItem> items;

    bool all_ok() const {
        return std::all_of(items.begin(), items.end(), [](const BoundItem& b) { return b.ok; });
    }
};

inline CoefficientReport coefficient_bounds(const CoefficientField& f, const std::vector<double>& radii,
                                            int directions = 64) {
    const int m = f.m;
    if ((f.A(Vec::Zero(m)) - Mat::Identity(m, m)).cwiseAbs().maxCoeff() > 1e-9)
        throw PreconditionError("coefficient bounds need A(0) = Id; recenter first");
    const double D = f.da_bound, s = std::sqrt(static_cast<double>(m)) * D;
    const double inf = std::numeric_limits<double>::infinity();
    CoefficientReport rep;
    rep.da_bound = D;
    const char* names[7] = {"|A-Id|/|x|",       "|mu-1|/|x|", "|1/mu-1|/|x|", "|1/mu^2-1|/|x|",
                            "|grad mu|",        "|div(A grad|x|)-(m-1)/|x||", "|div(Ax/mu)-m|/|x|"};
    for (int k = 0; k < 7; ++k) rep.items.push_back({k + 1, names[k]});

    auto mu_of = [&](const Vec& y) { return mu(f, y); };
    auto radial_flux = [&](const Vec& y) -> Vec { return f.A(y) * y / y.norm(); };
    auto Z = [&](const Vec& y) -> Vec { return f.A(y) * y / mu(f, y); };
    auto div = [&](const std::function<Vec(const Vec&)>& V, const Vec& y) { return detail::jacobian(V, y).trace(); };

    for (double r : radii) {
        if (!(r > 0)) continue;
        for (const Vec& d : detail::unit_directions(m, directions)) {
            const Vec x = r * d;
            const Mat A = f.A(x);
            const double mux = mu_of(x);
            Vec gmu(m);
            {
                const double h = detail::fd_step(x);
                for (int k = 0; k < m; ++k) {
                    Vec xp = x, xm = x;
                    xp[k] += h;
                    xm[k] -= h;
                    gmu[k] = (mu_of(xp) - mu_of(xm)) / (2 * h);
                }
            }
            const double t = s * r;
            const double lo_mu = 1.0 - t;
            const double measured[7] = {
                (A - Mat::Identity(m, m)).operatorNorm() / r,
                std::abs(mux - 1.0) / r,
                std::abs(1.0 / mux - 1.0) / r,
                std::abs(1.0 / (mux * mux) - 1.0) / r,
                gmu.norm(),
                std::abs(div(radial_flux, x) - (m - 1.0) / r),
                std::abs(div(Z, x) - m) / r,
            };
            const double bound[7] = {
                s,
                s,
                t < 1 ? s / (1.0 - t) : inf,
                D * r < 1 ? s * (2.0 + s) / ((1.0 - D * r) * (1.0 - D * r)) : inf,
                D * (3.0 * m * m + 2.0 * m),
                3.0 * m * m * D,
                lo_mu > 0 ? 3.0 * m * m * D / lo_mu + (m - 1.0) * s / lo_mu +
                                (1.0 + t) * (3.0 * m * m + 2.0 * m) * D / (lo_mu * lo_mu)
                          : inf,
            };
            const double slack = 1e-6 * (1.0 + 1.0 / r);
            for (int k = 0; k < 7; ++k) {
                auto& it = rep.items[k];
                it.worst = std::max(it.worst, measured[k]);
                if (bound[k] > 0) it.worst_ratio = std::max(it.worst_ratio, measured[k] / bound[k]);
                else if (measured[k] > slack) it.worst_ratio = inf;
                if (measured[k] > bound[k] + slack) it.ok = false;
            }
        }
    }
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Recentering: T x = x0 + S x with S = A(x0)^{1/2}, A_{x0}(x) = S^{-1} A(T x) S^{-1}.

struct Chart {
    Vec x0;
    Mat S;
    Mat S_inv;

    Vec to_original(const Vec& x) const { return x0 + S * x; }
};

struct Recentered {
    CoefficientField field;
    Chart chart;
};

inline Recentered recenter(const CoefficientField& f, const Vec& x0) {
    const int m = f.m;
    if (x0.size() != m) throw ShapeError("center has the wrong dimension");
    const Mat A0 = f.A(x0);
    detail::check_spd(A0, "A(x0)");
    Eigen::SelfAdjointEigenSolver<Mat> es(A0);
    const Vec ev = es.eigenvalues();
    const Mat V = es.eigenvectors();
    Chart c;
    c.x0 = x0;
    c.S = V * ev.cwiseSqrt().asDiagonal() * V.transpose();
    c.S_inv = V * ev.cwiseSqrt().cwiseInverse().asDiagonal() * V.transpose();
    const double room = f.radius - x0.norm();
    if (!(room > 0)) throw DomainError("center lies outside the coefficient domain");
    const double radius = room / std::sqrt(ev.maxCoeff());
    auto A = f.A;
    auto a = f.a;
    auto Ax = [A, c](const Vec& x) -> Mat {
        Mat M = c.S_inv * A(c.to_original(x)) * c.S_inv;
        return 0.5 * (M + M.transpose());
    };
    std::function<double(const Vec&)> ax;
    if (a) ax = [a, c](const Vec& x) { return a(c.to_original(x)); };
    return {CoefficientField::make(m, Ax, radius, ax), c};
}

// ---------------------------------------------------------------------------------------------
// Almgren quotient N = E / H around a center.

struct AlmgrenTrace {
    Vec x0;
    std::vector<double> radii;
    std::vector<double> E;
    std::vector<double> H;
    std::vector<double> N;
    std::vector<double> H_ellipsoid;  // H recomputed on the ellipsoid in original coordinates
    double C = 0.0;
    bool truncated = false;
    std::string flag;

    std::size_t size() const { return radii.size(); }
};

struct TraceOptions {
    int angular = 128;
    int shells_per_radius = 1;  // Gauss panels between consecutive radii
    bool ellipsoid_route = true;
};

namespace detail {

struct SphereRule {
    std::vector<Vec> nodes;
    std::vector<double> weights;  // summing to |S^{m-1}|
};

inline SphereRule sphere_rule(int m, int angular) {
    SphereRule s;
    if (m == 1) {
        s.nodes = {Vec::Constant(1, 1.0), Vec::Constant(1, -1.0)};
        s.weights = {1.0, 1.0};
    } else if (m == 2) {
        for (int k = 0; k < angular; ++k) {
            const double a = 2.0 * std::numbers::pi * k / angular;
            Vec d(2);
            d << std::cos(a), std::sin(a);
            s.nodes.push_back(d);
            s.weights.push_back(2.0 * std::numbers::pi / angular);
        }
    } else if (m == 3) {
        std::vector<double> x, w;
        gauss_legendre<30>(x, w);
        const int nphi = std::max(8, angular / 2);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double ct = x[i], st = std::sqrt(1.0 - ct * ct);
            for (int k = 0; k < nphi; ++k) {
                const double a = 2.0 * std::numbers::pi * k / nphi;
                Vec d(3);
                d << st * std::cos(a), st * std::sin(a), ct;
                s.nodes.push_back(d);
                s.weights.push_back(w[i] * 2.0 * std::numbers::pi / nphi);
            }
        }
    } else {
        throw DomainError("Almgren quadrature is implemented for m <= 3");
    }
    return s;
}

inline const std::pair<std::vector<double>, std::vector<double>>& radial_rule() {
    static const auto rule = [] {
        std::pair<std::vector<double>, std::vector<double>> r;
        gauss_legendre<10>(r.first, r.second);
        return r;
    }();
    return rule;
}

// Area of the image of the unit tangent cube at w under S.
inline double tangential_jacobian(const Mat& S, const Vec& w) {
    const int m = static_cast<int>(w.size());
    if (m == 1) return 1.0;
    Eigen::HouseholderQR<Mat> qr(w);
    const Mat Q = qr.householderQ();
    const Mat T = S * Q.rightCols(m - 1);
    return std::sqrt((T.transpose() * T).determinant());
}

}  // namespace detail

inline std::vector<double> geometric_radii(double r_min, double r_max, int per_decade = 24) {
    if (!(r_min > 0) || !(r_max > r_min)) throw DomainError("radii need 0 < r_min < r_max");
    const int n = static_cast<int>(std::ceil(per_decade * std::log10(r_max / r_min)));
    std::vector<double> r;
    for (int k = 0; k <= n; ++k) r.push_back(r_min * std::pow(r_max / r_min, static_cast<double>(k) / n));
    return r;
}

inline AlmgrenTrace almgren_trace(const LocalField& u, const CoefficientField& field, const Reaction& f,
                                  const Vec& x0, const std::vector<double>& radii, const TraceOptions& opt = {}) {
    const int m = field.m;
    if (u.m != m) throw ShapeError("field and coefficient dimensions differ");
    if (radii.empty()) throw InsufficientDataError("no radii given");
    for (std::size_t k = 0; k < radii.size(); ++k)
        if (!(radii[k] > 0) || (k > 0 && !(radii[k] > radii[k - 1])))
            throw DomainError("radii must be positive and increasing");

    const Recentered rc = recenter(field, x0);
    if (radii.back() > rc.field.radius * (1 + 1e-12))
        throw DomainError("radius exceeds the coefficient domain in the recentered frame");
    const Chart& ch = rc.chart;
    const LocalField v = pulled_back(u, x0, ch.S);
    const auto& Af = rc.field.A;
    const detail::SphereRule sph = detail::sphere_rule(m, opt.angular);
    const auto& rr = detail::radial_rule();
    const Mat A0_inv = ch.S_inv * ch.S_inv;
    const double detS = ch.S.determinant();

    AlmgrenTrace tr;
    tr.x0 = x0;
    double volume = 0.0, prev = 0.0;
    Vec val;
    Mat grad;
    for (double r : radii) {
        const int panels = std::max(1, opt.shells_per_radius);
        for (int p = 0; p < panels; ++p) {
            const double a = prev + (r - prev) * p / panels, b = prev + (r - prev) * (p + 1) / panels;
            const double c = 0.5 * (a + b), h = 0.5 * (b - a);
            for (std::size_t q = 0; q < rr.first.size(); ++q) {
                const double rho = c + h * rr.first[q];
                const double wr = h * rr.second[q] * std::pow(rho, m - 1);
                for (std::size_t j = 0; j < sph.nodes.size(); ++j) {
                    const Vec x = rho * sph.nodes[j];
                    v.eval(x, val, grad);
                    const Mat A = Af(x);
                    double e = 0.0;
                    for (int i = 0; i < v.ell; ++i) {
                        const Vec g = grad.row(i).transpose();
                        e += g.dot(A * g);
                        if (f) e -= f(ch.to_original(x), i, val[i]) * val[i];
                    }
                    volume += wr * sph.weights[j] * e;
                }
            }
        }
        prev = r;

        double H = 0.0, He = 0.0;
        for (std::size_t j = 0; j < sph.nodes.size(); ++j) {
            const Vec& w = sph.nodes[j];
            const Vec x = r * w;
            v.eval(x, val, grad);
            H += sph.weights[j] * mu(rc.field, x) * val.squaredNorm();
            if (opt.ellipsoid_route) {
                // same surface integral on the ellipsoid y = x0 + S r w in the original variables
                const Vec y = ch.to_original(x);
                const Vec dy = y - x0;
                const double c_xy = 1.0 / (detS * (ch.S_inv * w).norm());
                const double b = c_xy * dy.dot(A0_inv * field.A(y) * A0_inv * dy) / (ch.S_inv * dy).squaredNorm();
                Vec uy;
                Mat gy;
                u.eval(y, uy, gy);
                He += sph.weights[j] * detail::tangential_jacobian(ch.S, w) * b * uy.squaredNorm();
            }
        }
        if (!(H > 0) || !std::isfinite(H) || !std::isfinite(volume)) {
            tr.truncated = true;
            tr.flag = "H vanished at r = " + detail::fmt_g(r);
            break;
        }
        const double E = std::pow(r, 2.0 - m) * volume;
        tr.radii.push_back(r);
        tr.E.push_back(E);
        tr.H.push_back(H);
        tr.N.push_back(E / H);
        if (opt.ellipsoid_route) tr.H_ellipsoid.push_back(He);
    }
    return tr;
}

// ---------------------------------------------------------------------------------------------
// Monotonicity of e^{C r}(N + 1) and the doubling bound |(log H)' - 2N/r| <= C.

struct MonotonicityOptions {
    double cap = 1e3;
    double slack = 1e-6;  // relative
};

struct MonotonicityReport {
    double C_fit = 0.0;
    bool within_cap = true;
    std::vector<std::pair<double, double>> violations;  // failing [r_k, r_{k+1}] at the cap
    double doubling_sup = 0.0;
    double C_star = 0.0;  // one constant serving both inequalities
    bool doubling_ok = true;
};

namespace detail {

inline std::vector<std::pair<double, double>> monotone_failures(const AlmgrenTrace& t, double C, double slack) {
    std::vector<std::pair<double, double>> bad;
    for (std::size_t k = 0; k + 1 < t.size(); ++k) {
        const double g0 = std::exp(C * t.radii[k]) * (t.N[k] + 1.0);
        const double g1 = std::exp(C * t.radii[k + 1]) * (t.N[k + 1] + 1.0);
        if (g1 < g0 - slack * std::abs(g0)) bad.push_back({t.radii[k], t.radii[k + 1]});
    }
    return bad;
}

}  // namespace detail

// (log H)' from three-point differences in log r.
inline std::vector<double> doubling_defect(const AlmgrenTrace& t) {
    std::vector<double> out;
    for (std::size_t k = 1; k + 1 < t.size(); ++k) {
        const double hm = std::log(t.radii[k] / t.radii[k - 1]), hp = std::log(t.radii[k + 1] / t.radii[k]);
        const double ym = std::log(t.H[k - 1]), y0 = std::log(t.H[k]), yp = std::log(t.H[k + 1]);
        const double dyds = (hm * hm * yp - hp * hp * ym + (hp * hp - hm * hm) * y0) / (hm * hp * (hm + hp));
        out.push_back(std::abs(dyds / t.radii[k] - 2.0 * t.N[k] / t.radii[k]));
    }
    return out;
}

inline MonotonicityReport monotonicity_check(const AlmgrenTrace& t, const MonotonicityOptions& opt = {}) {
    if (t.size() < 10) throw InsufficientDataError("monotonicity check needs at least 10 radii");
    MonotonicityReport rep;
    auto ok = [&](double C) { return detail::monotone_failures(t, C, opt.slack).empty(); };
    if (ok(0.0)) {
        rep.C_fit = 0.0;
    } else if (!ok(opt.cap)) {
        rep.C_fit = opt.cap;
        rep.within_cap = false;
        rep.violations = detail::monotone_failures(t, opt.cap, opt.slack);
    } else {
        double lo = 0.0, hi = opt.cap;
        while (hi - lo > 1e-12 * opt.cap) {
            const double mid = 0.5 * (lo + hi);
            (ok(mid) ? hi : lo) = mid;
        }
        rep.C_fit = hi;
    }
    for (double d : doubling_defect(t)) rep.doubling_sup = std::max(rep.doubling_sup, d);
    rep.C_star = std::max(rep.C_fit, rep.doubling_sup);
    rep.doubling_ok = rep.within_cap && rep.C_star <= opt.cap && ok(rep.C_star);
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Local Pohozaev identity on B_r(0) with Z = A x / mu.

struct PohozaevReport {
    double lhs = 0.0;
    double rhs = 0.0;
    double residual = 0.0;
    double scale = 0.0;  // sum of the absolute values of all terms

    double relative() const { return scale > 0 ? residual / scale : 0.0; }
};

inline PohozaevReport pohozaev_residual(const LocalField& u, const CoefficientField& field, const Reaction& f,
                                        double r, int panels = 8, int angular = 256) {
    const int m = field.m;
    if (!(r > 0)) throw DomainError("radius must be positive");
    const detail::SphereRule sph = detail::sphere_rule(m, angular);
    const auto& rr = detail::radial_rule();
    auto Z = [&](const Vec& y) -> Vec { return field.A(y) * y / mu(field, y); };

    double L = 0.0, terms[5] = {0, 0, 0, 0, 0};
    Vec val;
    Mat grad;
    for (int p = 0; p < panels; ++p) {
        const double a = r * p / panels, b = r * (p + 1) / panels;
        const double c = 0.5 * (a + b), h = 0.5 * (b - a);
        for (std::size_t q = 0; q < rr.first.size(); ++q) {
            const double rho = c + h * rr.first[q];
            const double wr = h * rr.second[q] * std::pow(rho, m - 1);
            for (std::size_t j = 0; j < sph.nodes.size(); ++j) {
                const Vec x = rho * sph.nodes[j];
                const double w = wr * sph.weights[j];
                u.eval(x, val, grad);
                const Mat A = field.A(x);
                const Vec z = Z(x);
                const Mat J = detail::jacobian(Z, x);  // J(j, h) = d_h Z_j
                std::vector<Mat> dA(m);
                for (int k = 0; k < m; ++k) dA[k] = detail::partial_A(field, x, k);
                for (int i = 0; i < u.ell; ++i) {
                    const Vec g = grad.row(i).transpose();
                    const Vec Ag = A * g;
                    const double q2 = g.dot(Ag);
                    terms[0] += w * J.trace() * q2;
                    if (f) terms[1] += w * 2.0 * f(x, i, val[i]) * g.dot(z);
                    double zda = 0.0;
                    for (int k = 0; k < m; ++k) zda += z[k] * g.dot(dA[k] * g);
                    terms[3] += w * zda;
                    terms[4] += -2.0 * w * Ag.dot(J.transpose() * g);
                }
            }
        }
    }
    for (std::size_t j = 0; j < sph.nodes.size(); ++j) {
        const Vec& nu = sph.nodes[j];
        const Vec x = r * nu;
        const double w = sph.weights[j] * std::pow(r, m - 1);
        u.eval(x, val, grad);
        const Mat A = field.A(x);
        const Vec z = Z(x);
        for (int i = 0; i < u.ell; ++i) {
            const Vec g = grad.row(i).transpose();
            const Vec Ag = A * g;
            L += w * r * g.dot(Ag);
            terms[2] += w * 2.0 * z.dot(g) * Ag.dot(nu);
        }
    }
    PohozaevReport rep;
    rep.lhs = L;
    rep.scale = std::abs(L);
    for (double t : terms) {
        rep.rhs += t;
        rep.scale += std::abs(t);
    }
    rep.residual = std::abs(rep.lhs - rep.rhs);
    return rep;
}

// ---------------------------------------------------------------------------------------------
// Charts of latitude profiles. On a biaxial S^m with flat orbits (S^2, or S^3 split 2+2) the
// coordinates (psi, angles) give -div(A grad u) = sqrt(g) (u^{2*-1} - kappa R u) with A = sqrt(g) g^{-1}.

struct ProfileChart {
    LocalField u;
    CoefficientField field;
    Reaction f;
    Vec x0;  // chart origin, psi = psi0
    double psi0 = 0.0;
};

// psi where u_0 - u_1 first changes sign, interpolated linearly.
inline double profile_crossing(const MeshMetric& mesh, const FieldTuple& u) {
    if (mesh.kind != MeshKind::Latitude) throw DomainError("profile crossing needs a latitude grid");
    if (u.ell() < 2) throw ShapeError("profile crossing needs two components");
    for (std::size_t k = 0; k + 1 < mesh.size(); ++k) {
        const double d0 = u.values(k, 0) - u.values(k, 1), d1 = u.values(k + 1, 0) - u.values(k + 1, 1);
        if (d0 == 0.0) return mesh.t[k];
        if ((d0 > 0) != (d1 > 0)) return mesh.t[k] + (mesh.t[k + 1] - mesh.t[k]) * d0 / (d0 - d1);
    }
    throw DegeneratePartitionError("components never cross");
}

inline ProfileChart latitude_chart(const MeshMetric& mesh, const FieldTuple& u, double psi0) {
    if (mesh.kind != MeshKind::Latitude || mesh.biaxial_p == 0)
        throw DomainError("latitude chart needs a biaxial grid");
    const int p = mesh.biaxial_p, q = mesh.m + 1 - p;
    if (p > 2 || q > 2 || q < 1) throw DomainError("latitude chart needs flat orbits (S^2, or S^3 split 2+2)");
    const int m = mesh.m;
    const std::size_t n = mesh.size();
    const double h = mesh.t[1] - mesh.t[0];
    for (std::size_t k = 1; k < n; ++k)
        if (std::abs(mesh.t[k] - mesh.t[k - 1] - h) > 1e-9 * h) throw DomainError("latitude chart needs a uniform grid");
    const double T = mesh.t_end();
    if (!(psi0 > 0 && psi0 < T)) throw DomainError("chart center must lie strictly between the poles");

    GridField g;
    g.m = 1;
    g.ell = u.ell();
    g.lo = Vec::Constant(1, mesh.t[0]);
    g.h = h;
    g.n = {static_cast<int>(n)};
    g.values = u.values;
    auto profile = std::make_shared<const GridField>(std::move(g));

    ProfileChart pc;
    pc.psi0 = psi0;
    pc.x0 = Vec::Zero(m);
    pc.u.m = m;
    pc.u.ell = u.ell();
    pc.u.eval = [profile, psi0, m](const Vec& x, Vec& v, Mat& grad) {
        Mat g1;
        interpolate(*profile, Vec::Constant(1, psi0 + x[0]), v, g1);
        grad = Mat::Zero(v.size(), m);
        grad.col(0) = g1.col(0);
    };
    auto root_g = [p, q, psi0](const Vec& x) {
        const double psi = psi0 + x[0];
        return std::pow(std::cos(psi), p - 1) * std::pow(std::sin(psi), q - 1);
    };
    auto A = [p, q, m, psi0, root_g](const Vec& x) -> Mat {
        const double psi = psi0 + x[0], s = root_g(x);
        Mat M = Mat::Zero(m, m);
        M(0, 0) = s;
        int k = 1;
        if (p == 2) {
            M(k, k) = s / (std::cos(psi) * std::cos(psi));
            ++k;
        }
        if (q == 2) M(k, k) = s / (std::sin(psi) * std::sin(psi));
        return M;
    };
    const double radius = 0.95 * std::min(psi0, T - psi0);
    pc.field = CoefficientField::make(m, A, radius, root_g);
    const double two_star = critical_exponent(m), kr = kappa(m) * mesh.curvature.front();
    pc.f = [root_g, two_star, kr](const Vec& x, int, double s) {
        return root_g(x) * (std::pow(std::abs(s), two_star - 2.0) * s - kr * s);
    };
    return pc;
}

}  // namespace yamabe
