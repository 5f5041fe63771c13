#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "yamabe/constants.hpp"
#include "yamabe/error.hpp"
#include "yamabe/mesh.hpp"

namespace yamabe {

struct CouplingSpec {
    int ell = 1;
    Eigen::MatrixXd lambda;  // off-diagonal couplings, lambda_ij = lambda_ji < 0
    Eigen::MatrixXd alpha;   // alpha_ij + beta_ij = 2*, alpha_ij = beta_ji
    Eigen::MatrixXd beta;

    // lambda_ij = lambda, alpha = beta = 2*/2
    static CouplingSpec symmetric(int ell, int m, double lambda) {
        const double b = critical_exponent(m) / 2.0;
        CouplingSpec s;
        s.ell = ell;
        s.lambda = Eigen::MatrixXd::Constant(ell, ell, lambda);
        s.alpha = Eigen::MatrixXd::Constant(ell, ell, b);
        s.beta = s.alpha;
        s.lambda.diagonal().setZero();
        s.alpha.diagonal().setZero();
        s.beta.diagonal().setZero();
        return s;
    }

    static CouplingSpec general(const Eigen::MatrixXd& lambda, const Eigen::MatrixXd& alpha, int m) {
        CouplingSpec s;
        s.ell = static_cast<int>(lambda.rows());
        s.lambda = lambda;
        s.alpha = alpha;
        s.beta = Eigen::MatrixXd::Constant(s.ell, s.ell, critical_exponent(m)) - alpha;
        s.lambda.diagonal().setZero();
        s.alpha.diagonal().setZero();
        s.beta.diagonal().setZero();
        return s;
    }

    void validate(int m) const {
        const double ts = critical_exponent(m);
        if (ell < 1) throw ShapeError("coupling spec needs ell >= 1");
        if (lambda.rows() != ell || lambda.cols() != ell || alpha.rows() != ell || alpha.cols() != ell ||
            beta.rows() != ell || beta.cols() != ell)
            throw ShapeError("coupling matrices must be ell x ell");
        for (int i = 0; i < ell; ++i)
            for (int j = 0; j < ell; ++j) {
                if (i == j) continue;
                if (!(lambda(i, j) < 0)) throw DomainError("couplings must be negative");
                if (lambda(i, j) != lambda(j, i)) throw DomainError("couplings must be symmetric");
                if (std::abs(alpha(i, j) + beta(i, j) - ts) > 1e-12) throw DomainError("alpha_ij + beta_ij must equal 2*");
                if (alpha(i, j) != beta(j, i)) throw DomainError("alpha_ij must equal beta_ji");
                if (!(alpha(i, j) > 1 && beta(i, j) > 1)) throw DomainError("exponents must exceed 1");
            }
    }

    bool symmetric_case(int m) const {
        const double b = critical_exponent(m) / 2.0;
        for (int i = 0; i < ell; ++i)
            for (int j = 0; j < ell; ++j)
                if (i != j && (alpha(i, j) != b || beta(i, j) != b || lambda(i, j) != lambda(0, 1))) return false;
        return true;
    }

    CouplingSpec with_lambda(double lam) const {
        CouplingSpec s = *this;
        s.lambda = Eigen::MatrixXd::Constant(ell, ell, lam);
        s.lambda.diagonal().setZero();
        return s;
    }

    // The sub-system on the listed components.
    CouplingSpec subset(const std::vector<int>& idx) const {
        CouplingSpec s;
        s.ell = static_cast<int>(idx.size());
        s.lambda.resize(s.ell, s.ell);
        s.alpha.resize(s.ell, s.ell);
        s.beta.resize(s.ell, s.ell);
        for (int a = 0; a < s.ell; ++a)
            for (int b = 0; b < s.ell; ++b) {
                s.lambda(a, b) = lambda(idx[a], idx[b]);
                s.alpha(a, b) = alpha(idx[a], idx[b]);
                s.beta(a, b) = beta(idx[a], idx[b]);
            }
        return s;
    }
};

// The conformal form A = K + C with the lumped weights and a factorization of A.
// Products are evaluated edge-wise, u^T A v = sum_e w_e (u_a - u_b)(v_a - v_b) + sum_k c_k u_k v_k, which avoids
// the O(1/h^2) cancellation of the assembled matrix.
class ConformalSystem {
public:
    ConformalSystem() = default;

    // K symmetric with zero row sums, c the diagonal zeroth-order part.
    ConformalSystem(int m, const SpMat& K, const Eigen::VectorXd& c, const Eigen::VectorXd& weights)
        : m_(m), c_(c), w_(weights) {
        if (m < 3) throw DomainError("the critical exponent needs m >= 3");
        two_star_ = critical_exponent(m);
        for (Eigen::Index col = 0; col < K.outerSize(); ++col)
            for (SpMat::InnerIterator it(K, col); it; ++it)
                if (it.row() < it.col() && it.value() != 0.0) {
                    ea_.push_back(static_cast<int>(it.row()));
                    eb_.push_back(static_cast<int>(it.col()));
                    ew_.push_back(-it.value());
                }
        build_matrix();
    }

    static ConformalSystem from_forms(int m, const Forms& f) {
        return ConformalSystem(m, f.stiffness, f.curvature_mass.diagonal(), f.weights);
    }

    static ConformalSystem from_mesh(const MeshMetric& mesh) { return from_forms(mesh.m, assemble_forms(mesh)); }

    int m() const { return m_; }
    double two_star() const { return two_star_; }
    Eigen::Index size() const { return w_.size(); }
    const SpMat& matrix() const { return A_; }
    const Eigen::VectorXd& weights() const { return w_; }

    Eigen::VectorXd apply(const Eigen::VectorXd& u) const {
        Eigen::VectorXd y = c_.cwiseProduct(u);
        for (std::size_t e = 0; e < ew_.size(); ++e) {
            const double f = ew_[e] * (u[ea_[e]] - u[eb_[e]]);
            y[ea_[e]] += f;
            y[eb_[e]] -= f;
        }
        return y;
    }
    double inner(const Eigen::VectorXd& u, const Eigen::VectorXd& v) const {
        double s = 0;
        for (std::size_t e = 0; e < ew_.size(); ++e) s += ew_[e] * (u[ea_[e]] - u[eb_[e]]) * (v[ea_[e]] - v[eb_[e]]);
        for (Eigen::Index k = 0; k < c_.size(); ++k) s += c_[k] * u[k] * v[k];
        return s;
    }
    double norm_sq(const Eigen::VectorXd& u) const { return inner(u, u); }
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const { return ldlt_->solve(rhs); }

    // Homogeneous Dirichlet restriction to the nodes with keep[k] true.
    ConformalSystem restrict(const std::vector<bool>& keep, std::vector<int>* index = nullptr) const {
        std::vector<int> map(size(), -1), back;
        for (Eigen::Index k = 0; k < size(); ++k)
            if (keep[k]) {
                map[k] = static_cast<int>(back.size());
                back.push_back(static_cast<int>(k));
            }
        if (back.empty()) throw DegeneratePartitionError("restriction to an empty node set");
        ConformalSystem s;
        s.m_ = m_;
        s.two_star_ = two_star_;
        s.c_.resize(back.size());
        s.w_.resize(back.size());
        for (std::size_t k = 0; k < back.size(); ++k) {
            s.c_[k] = c_[back[k]];
            s.w_[k] = w_[back[k]];
        }
        for (std::size_t e = 0; e < ew_.size(); ++e) {
            const int a = map[ea_[e]], b = map[eb_[e]];
            if (a >= 0 && b >= 0) {
                s.ea_.push_back(a);
                s.eb_.push_back(b);
                s.ew_.push_back(ew_[e]);
            } else if (a >= 0) {
                s.c_[a] += ew_[e];
            } else if (b >= 0) {
                s.c_[b] += ew_[e];
            }
        }
        s.build_matrix();
        if (index) *index = back;
        return s;
    }

private:
    void build_matrix() {
        const Eigen::Index n = w_.size();
        std::vector<Eigen::Triplet<double>> trip;
        for (Eigen::Index k = 0; k < n; ++k) trip.emplace_back(k, k, c_[k]);
        for (std::size_t e = 0; e < ew_.size(); ++e) {
            trip.emplace_back(ea_[e], ea_[e], ew_[e]);
            trip.emplace_back(eb_[e], eb_[e], ew_[e]);
            trip.emplace_back(ea_[e], eb_[e], -ew_[e]);
            trip.emplace_back(eb_[e], ea_[e], -ew_[e]);
        }
        A_.resize(n, n);
        A_.setFromTriplets(trip.begin(), trip.end());
        ldlt_ = std::make_shared<Eigen::SimplicialLDLT<SpMat>>(A_);
        if (ldlt_->info() != Eigen::Success) throw NumericalError("factorization of the conformal form failed");
        const auto& D = ldlt_->vectorD();
        for (Eigen::Index k = 0; k < D.size(); ++k)
            if (!(D[k] > 0)) throw NumericalError("conformal form is not coercive on this mesh");
    }

    int m_ = 0;
    double two_star_ = 0;
    std::vector<int> ea_, eb_;
    std::vector<double> ew_;
    Eigen::VectorXd c_;
    Eigen::VectorXd w_;
    SpMat A_;
    std::shared_ptr<Eigen::SimplicialLDLT<SpMat>> ldlt_;
};

struct EnergyBreakdown {
    Eigen::VectorXd a;  // ||u_i||^2
    Eigen::VectorXd b;  // |u_i|_{2*}^{2*}
    Eigen::MatrixXd d;  // lambda_ij beta_ij int |u_j|^alpha_ij |u_i|^beta_ij
    Eigen::MatrixXd alpha, beta;
    double two_star = 0;
};

namespace detail {

inline double spow(double x, double p) { return x == 0.0 ? 0.0 : std::pow(std::abs(x), p); }

inline void check_shape(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    if (u.ell() != spec.ell) throw ShapeError("field has " + std::to_string(u.ell()) + " components, coupling spec " +
                                              std::to_string(spec.ell));
    if (u.nodes() != sys.size()) throw ShapeError("field and mesh sizes differ");
}

inline double coupling_integral(const Eigen::VectorXd& w, const Eigen::VectorXd& uj, const Eigen::VectorXd& ui,
                                double alpha, double beta) {
    double s = 0;
    for (Eigen::Index k = 0; k < w.size(); ++k)
        if (uj[k] != 0.0 && ui[k] != 0.0) s += w[k] * spow(uj[k], alpha) * spow(ui[k], beta);
    return s;
}

}  // namespace detail

inline EnergyBreakdown energy_breakdown(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    detail::check_shape(sys, u, spec);
    const int ell = u.ell();
    EnergyBreakdown e;
    e.two_star = sys.two_star();
    e.alpha = spec.alpha;
    e.beta = spec.beta;
    e.a.resize(ell);
    e.b.resize(ell);
    e.d = Eigen::MatrixXd::Zero(ell, ell);
    for (int i = 0; i < ell; ++i) {
        e.a[i] = sys.norm_sq(u.component(i));
        e.b[i] = lp_integral(sys.weights(), u.component(i), sys.two_star());
        for (int j = 0; j < ell; ++j)
            if (j != i)
                e.d(i, j) = spec.lambda(i, j) * spec.beta(i, j) *
                            detail::coupling_integral(sys.weights(), u.component(j), u.component(i), spec.alpha(i, j),
                                                      spec.beta(i, j));
    }
    return e;
}

// J(u) = 1/2 sum a_i - 1/2* sum b_i - 1/2 sum_{i != j} lambda_ij int |u_j|^alpha |u_i|^beta
inline double energy(const EnergyBreakdown& e) {
    double J = 0;
    for (Eigen::Index i = 0; i < e.a.size(); ++i) {
        J += 0.5 * e.a[i] - e.b[i] / e.two_star;
        for (Eigen::Index j = 0; j < e.a.size(); ++j)
            if (j != i) J -= 0.5 * e.d(i, j) / e.beta(i, j);
    }
    return J;
}

inline double energy(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    return energy(energy_breakdown(sys, u, spec));
}

// Dual vectors D_i = A u_i - N_i(u) with D_i . v = d_i J(u)[v].
inline Eigen::MatrixXd energy_differential(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    detail::check_shape(sys, u, spec);
    const int ell = u.ell();
    const auto& w = sys.weights();
    const double ts = sys.two_star();
    Eigen::MatrixXd D(u.nodes(), ell);
    for (int i = 0; i < ell; ++i) {
        Eigen::VectorXd Ni(u.nodes());
        for (Eigen::Index k = 0; k < u.nodes(); ++k) {
            const double ui = u.values(k, i);
            double nl = detail::spow(ui, ts - 2.0) * ui;
            for (int j = 0; j < ell; ++j) {
                if (j == i || ui == 0.0) continue;
                const double uj = u.values(k, j);
                if (uj == 0.0) continue;
                nl += spec.lambda(i, j) * spec.beta(i, j) * detail::spow(uj, spec.alpha(i, j)) *
                      detail::spow(ui, spec.beta(i, j) - 2.0) * ui;
            }
            Ni[k] = w[k] * nl;
        }
        D.col(i) = sys.apply(u.component(i)) - Ni;
    }
    return D;
}

// Riesz representatives of the partial derivatives in the <.,.>_g inner product.
inline FieldTuple gradient(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    const Eigen::MatrixXd D = energy_differential(sys, u, spec);
    FieldTuple g(u.nodes(), u.ell());
    for (int i = 0; i < u.ell(); ++i) g.component(i) = sys.solve(D.col(i));
    return g;
}

// ---- Nehari projection ----

// J_u(s) = 1/2 sum a_i s_i^2 - 1/2* sum b_i s_i^{2*} - 1/2 sum (d_ij / beta_ij) s_j^alpha s_i^beta
inline double projected_energy(const EnergyBreakdown& e, const Eigen::VectorXd& s) {
    double J = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        J += 0.5 * e.a[i] * s[i] * s[i] - e.b[i] * std::pow(s[i], e.two_star) / e.two_star;
        for (Eigen::Index j = 0; j < s.size(); ++j)
            if (j != i) J -= 0.5 * e.d(i, j) / e.beta(i, j) * std::pow(s[j], e.alpha(i, j)) * std::pow(s[i], e.beta(i, j));
    }
    return J;
}

// F_i(s) = s_i d_{s_i} J_u(s)
inline Eigen::VectorXd nehari_residual(const EnergyBreakdown& e, const Eigen::VectorXd& s) {
    Eigen::VectorXd F(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        F[i] = e.a[i] * s[i] * s[i] - e.b[i] * std::pow(s[i], e.two_star);
        for (Eigen::Index j = 0; j < s.size(); ++j)
            if (j != i) F[i] -= e.d(i, j) * std::pow(s[j], e.alpha(i, j)) * std::pow(s[i], e.beta(i, j));
    }
    return F;
}

struct NehariProjection {
    bool projectable = false;
    Eigen::VectorXd s;
    double residual = std::numeric_limits<double>::infinity();  // max_i |F_i| / (sum of |terms of F_i|)
    int iterations = 0;
    std::string method;
    std::string diagnostic;
};

namespace detail {

inline double relative_residual(const EnergyBreakdown& e, const Eigen::VectorXd& s) {
    const Eigen::VectorXd F = nehari_residual(e, s);
    double worst = 0;
    for (Eigen::Index i = 0; i < s.size(); ++i) {
        // each equation is measured against its own terms, so a collapsing component cannot hide
        double scale = e.a[i] * s[i] * s[i] + e.b[i] * std::pow(s[i], e.two_star);
        for (Eigen::Index j = 0; j < s.size(); ++j)
            if (j != i) scale += std::abs(e.d(i, j)) * std::pow(s[j], e.alpha(i, j)) * std::pow(s[i], e.beta(i, j));
        if (!(scale > 0)) return std::numeric_limits<double>::infinity();
        worst = std::max(worst, std::abs(F[i]) / scale);
    }
    return worst;
}

// Unique positive root in s of a - b s^{2*-2} + sum_j c_j s^{beta_j - 2}, c_j >= 0.
inline double scalar_root(double a, double b, double ts, const std::vector<std::pair<double, double>>& terms) {
    auto g = [&](double logs) {
        const double s = std::exp(logs);
        double v = a - b * std::pow(s, ts - 2.0);
        for (const auto& [c, be] : terms) v += c * std::pow(s, be - 2.0);
        return v;
    };
    double lo = -1.0, hi = 1.0;
    while (g(lo) <= 0 && lo > -700) lo *= 2;
    while (g(hi) >= 0 && hi < 700) hi *= 2;
    if (g(lo) <= 0 || g(hi) >= 0) return std::numeric_limits<double>::quiet_NaN();
    for (int it = 0; it < 80 && hi - lo > 1e-15 * std::max(1.0, std::abs(lo)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (g(mid) > 0 ? lo : hi) = mid;
    }
    return std::exp(0.5 * (lo + hi));
}

inline bool newton_log(const EnergyBreakdown& e, Eigen::VectorXd& s, int& iterations) {
    const Eigen::Index n = s.size();
    Eigen::VectorXd t = s.array().log();
    auto merit = [&](const Eigen::VectorXd& tt) {
        const Eigen::VectorXd ss = tt.array().exp();
        Eigen::VectorXd F = nehari_residual(e, ss);
        for (Eigen::Index i = 0; i < n; ++i) F[i] /= std::max(e.a[i] * ss[i] * ss[i], 1e-300);
        return F;
    };
    for (int it = 0; it < 100; ++it) {
        iterations = it + 1;
        const Eigen::VectorXd sv = t.array().exp();
        const Eigen::VectorXd F = nehari_residual(e, sv);
        if (relative_residual(e, sv) <= 1e-14) {
            s = sv;
            return true;
        }
        Eigen::MatrixXd Jm = Eigen::MatrixXd::Zero(n, n);
        for (Eigen::Index i = 0; i < n; ++i) {
            Jm(i, i) = 2 * e.a[i] * sv[i] * sv[i] - e.two_star * e.b[i] * std::pow(sv[i], e.two_star);
            for (Eigen::Index j = 0; j < n; ++j) {
                if (j == i) continue;
                const double c = e.d(i, j) * std::pow(sv[j], e.alpha(i, j)) * std::pow(sv[i], e.beta(i, j));
                Jm(i, i) -= e.beta(i, j) * c;
                Jm(i, j) -= e.alpha(i, j) * c;
            }
        }
        const Eigen::VectorXd step = Jm.fullPivLu().solve(-F);
        if (!step.allFinite()) return false;
        const double f0 = merit(t).squaredNorm();
        double damp = 1.0;
        const double cap = step.cwiseAbs().maxCoeff();
        if (cap > 2.0) damp = 2.0 / cap;
        bool accepted = false;
        for (int ls = 0; ls < 40; ++ls, damp *= 0.5) {
            const Eigen::VectorXd tn = t + damp * step;
            if (merit(tn).squaredNorm() < f0 || f0 < 1e-28) {
                t = tn;
                accepted = true;
                break;
            }
        }
        if (!accepted) return false;
        if (t.cwiseAbs().maxCoeff() > 690) return false;
    }
    return false;
}

inline bool gauss_seidel(const EnergyBreakdown& e, Eigen::VectorXd& s, int& iterations) {
    const Eigen::Index n = s.size();
    const Eigen::VectorXd s0 = s;
    double prev = std::numeric_limits<double>::infinity();
    int growing = 0;
    for (int sweep = 0; sweep < 400; ++sweep) {
        iterations = sweep + 1;
        for (Eigen::Index i = 0; i < n; ++i) {
            std::vector<std::pair<double, double>> terms;
            for (Eigen::Index j = 0; j < n; ++j)
                if (j != i) terms.push_back({-e.d(i, j) * std::pow(s[j], e.alpha(i, j)), e.beta(i, j)});
            const double r = scalar_root(e.a[i], e.b[i], e.two_star, terms);
            if (!std::isfinite(r)) return false;
            s[i] = r;
        }
        const double res = relative_residual(e, s);
        if (res <= 1e-13) return true;
        // runaway scaling: the coupled maximum does not exist
        const double spread = (s.array() / s0.array()).abs().log().maxCoeff();
        growing = res >= prev ? growing + 1 : 0;
        if (spread > 30 || growing > 20) return false;
        prev = res;
    }
    return false;
}

}  // namespace detail

inline NehariProjection nehari_project(const EnergyBreakdown& e) {
    const Eigen::Index n = e.a.size();
    NehariProjection p;
    for (Eigen::Index i = 0; i < n; ++i) {
        if (!(e.a[i] > 0) || !(e.b[i] > 0))
            throw PreconditionError("nehari_project: component " + std::to_string(i) + " is identically zero");
    }
    Eigen::VectorXd s(n);
    for (Eigen::Index i = 0; i < n; ++i) s[i] = std::pow(e.a[i] / e.b[i], 1.0 / (e.two_star - 2.0));
    int it = 0;
    Eigen::VectorXd sn = s;
    if (detail::newton_log(e, sn, it)) {
        p.method = "newton";
    } else {
        sn = s;
        const int newton_its = it;
        if (!detail::gauss_seidel(e, sn, it)) {
            p.iterations = newton_its + it;
            p.s = sn;
            p.diagnostic = "no positive critical point of J_u found (Newton and Gauss-Seidel both failed); "
                           "the tuple lies outside the projectable set";
            return p;
        }
        it += newton_its;
        p.method = "gauss-seidel";
    }
    p.iterations = it;
    p.s = sn;
    p.residual = detail::relative_residual(e, sn);
    p.projectable = std::isfinite(p.residual) && p.residual <= 1e-12;
    if (!p.projectable) p.diagnostic = "projection residual above 1e-12";
    return p;
}

inline NehariProjection nehari_project(const ConformalSystem& sys, const FieldTuple& u, const CouplingSpec& spec) {
    const auto e = energy_breakdown(sys, u, spec);
    for (int i = 0; i < u.ell(); ++i)
        if (std::pow(e.b[i], 1.0 / sys.two_star()) < 1e-12 || !(e.a[i] > 0))
            throw PreconditionError("nehari_project: component " + std::to_string(i) + " is identically zero");
    return nehari_project(e);
}

// ---- minimization of Psi(u) = J(s_u u) over the product of unit spheres ----

struct MinimizeOptions {
    double grad_rel_tol = 1e-7;  // relative to the initial Psi-gradient norm
    double grad_abs_tol = 0.0;
    double nehari_tol = 1e-10;
    int max_iterations = 20000;
    bool nonnegative = true;
    bool record_trace = true;
};

struct IterationRecord {
    int iter = 0;
    double psi = 0;
    double grad_norm = 0;
    double nehari_residual = 0;
    std::vector<double> norms_sq;
};

struct MinimizeResult {
    FieldTuple u;
    double energy = 0;
    int iterations = 0;
    bool converged = false;
    double grad_norm = 0;
    double initial_grad_norm = 0;
    double nehari_residual = 0;
    std::string diagnostic;
    std::vector<IterationRecord> trace;
};

namespace detail {

struct PsiState {
    FieldTuple unit;  // components of unit <.,.>_g norm
    EnergyBreakdown e;
    NehariProjection proj;
    double psi = std::numeric_limits<double>::infinity();
};

inline bool evaluate_psi(const ConformalSystem& sys, const CouplingSpec& spec, FieldTuple unit, PsiState& out) {
    out.unit = std::move(unit);
    for (int i = 0; i < out.unit.ell(); ++i) {
        const double nrm = std::sqrt(sys.norm_sq(out.unit.component(i)));
        if (!(nrm > 0) || !std::isfinite(nrm)) return false;
        out.unit.component(i) /= nrm;
        if (std::pow(lp_integral(sys.weights(), out.unit.component(i), sys.two_star()), 1.0 / sys.two_star()) < 1e-12)
            return false;
    }
    out.e = energy_breakdown(sys, out.unit, spec);
    out.proj = nehari_project(out.e);
    if (!out.proj.projectable) return false;
    out.psi = projected_energy(out.e, out.proj.s);
    return std::isfinite(out.psi);
}

inline FieldTuple scaled(const PsiState& st) {
    FieldTuple u = st.unit;
    for (int i = 0; i < u.ell(); ++i) u.component(i) *= st.proj.s[i];
    return u;
}

}  // namespace detail

inline MinimizeResult minimize(const ConformalSystem& sys, const FieldTuple& u0, const CouplingSpec& spec,
                               const MinimizeOptions& opt = {}) {
    detail::check_shape(sys, u0, spec);
    const int ell = u0.ell();
    MinimizeResult res;
    detail::PsiState st;
    FieldTuple start = u0;
    if (opt.nonnegative) start.values = start.values.cwiseAbs();
    for (int i = 0; i < ell; ++i)
        if (start.component(i).cwiseAbs().maxCoeff() == 0.0)
            throw PreconditionError("minimize: initial component " + std::to_string(i) + " is identically zero");
    if (!detail::evaluate_psi(sys, spec, start, st)) {
        res.u = u0;
        res.energy = std::numeric_limits<double>::infinity();
        res.diagnostic = "initial tuple is not projectable onto the Nehari set (Psi = +inf near the boundary)";
        return res;
    }
    FieldTuple G(sys.size(), ell), G_prev;
    FieldTuple x_prev;
    double t = 0;
    auto compute_gradient = [&](const detail::PsiState& s, double& norm) {
        const FieldTuple u = detail::scaled(s);
        const FieldTuple h = gradient(sys, u, spec);
        FieldTuple g(sys.size(), ell);
        double nsq = 0;
        for (int i = 0; i < ell; ++i) {
            const double c = sys.inner(h.component(i), s.unit.component(i));
            g.component(i) = s.proj.s[i] * (h.component(i) - c * s.unit.component(i));
            nsq += sys.norm_sq(g.component(i));
        }
        norm = std::sqrt(nsq);
        return g;
    };
    double gnorm = 0;
    G = compute_gradient(st, gnorm);
    res.initial_grad_norm = gnorm;
    const double target = std::max(opt.grad_abs_tol, opt.grad_rel_tol * gnorm);
    auto record = [&](int iter) {
        if (!opt.record_trace) return;
        IterationRecord r;
        r.iter = iter;
        r.psi = st.psi;
        r.grad_norm = gnorm;
        r.nehari_residual = st.proj.residual;
        for (int i = 0; i < ell; ++i) r.norms_sq.push_back(st.e.a[i] * st.proj.s[i] * st.proj.s[i]);
        res.trace.push_back(std::move(r));
    };
    record(0);
    int iter = 0;
    bool stalled = false;
    for (; iter < opt.max_iterations; ++iter) {
        if (gnorm <= target && st.proj.residual <= opt.nehari_tol) break;
        if (iter == 0) {
            t = std::min(1.0, 0.1 / std::max(gnorm, 1e-300));
        } else {
            double sy = 0, ss = 0;
            for (int i = 0; i < ell; ++i) {
                const Eigen::VectorXd dx = st.unit.component(i) - x_prev.component(i);
                const Eigen::VectorXd dg = G.component(i) - G_prev.component(i);
                ss += sys.norm_sq(dx);
                sy += sys.inner(dx, dg);
            }
            t = sy > 0 ? ss / sy : 2 * t;
            t = std::clamp(t, 1e-8, 1e3);
        }
        const double slack = 1e-13 * std::abs(st.psi);
        detail::PsiState trial;
        bool accepted = false;
        for (int ls = 0; ls < 60; ++ls, t *= 0.5) {
            FieldTuple cand = st.unit;
            cand.values -= t * G.values;
            if (opt.nonnegative) cand.values = cand.values.cwiseAbs();
            if (!detail::evaluate_psi(sys, spec, cand, trial)) continue;
            if (trial.psi <= st.psi - 1e-4 * t * gnorm * gnorm + slack) {
                accepted = true;
                break;
            }
        }
        if (!accepted) {
            stalled = true;
            break;
        }
        x_prev = st.unit;
        G_prev = G;
        st = std::move(trial);
        G = compute_gradient(st, gnorm);
        record(iter + 1);
    }
    res.u = detail::scaled(st);
    res.energy = st.psi;
    res.iterations = iter;
    res.grad_norm = gnorm;
    res.nehari_residual = st.proj.residual;
    res.converged = gnorm <= target && st.proj.residual <= opt.nehari_tol;
    if (!res.converged)
        res.diagnostic = stalled ? "line search stalled before reaching the gradient tolerance"
                                 : "iteration limit reached before the gradient tolerance";
    return res;
}

// Nehari identity J = (1/m) sum ||u_i||^2 holds on the Nehari set.
inline double nehari_energy(const ConformalSystem& sys, const FieldTuple& u) {
    double s = 0;
    for (int i = 0; i < u.ell(); ++i) s += sys.norm_sq(u.component(i));
    return s / sys.m();
}

// ---- compactness diagnostic ----

struct BlowupEntry {
    unsigned vanishing_mask = 0;  // Z: components that may vanish
    bool available = false;
    double c_sub = 0;   // least energy of the sub-system on the complement of Z
    double bound = 0;   // c_sub + |Z| sigma^{m/2} / m
    double margin = 0;  // bound - c_hat
    bool risk = false;
};

struct BlowupReport {
    double c_hat = 0;
    std::vector<BlowupEntry> entries;
    bool complete = true;
    bool risk = false;
    double min_margin = std::numeric_limits<double>::infinity();
    unsigned failing_mask = 0;
};

// c_sub maps the mask of surviving components to the sub-system energy; the empty survivor set has energy 0.
inline BlowupReport blowup_risk(double c_hat, int ell, int m, const std::map<unsigned, double>& c_sub) {
    BlowupReport r;
    r.c_hat = c_hat;
    const double bubble = std::pow(sobolev_constant(m), m / 2.0) / m;
    const unsigned all = (1u << ell) - 1;
    for (unsigned Z = 1; Z <= all; ++Z) {
        BlowupEntry e;
        e.vanishing_mask = Z;
        const unsigned survivors = all & ~Z;
        auto it = c_sub.find(survivors);
        if (survivors == 0) {
            e.available = true;
            e.c_sub = 0;
        } else if (it != c_sub.end()) {
            e.available = true;
            e.c_sub = it->second;
        }
        if (e.available) {
            e.bound = e.c_sub + std::popcount(Z) * bubble;
            e.margin = e.bound - c_hat;
            e.risk = e.margin <= 1e-9 * e.bound;
            if (e.margin < r.min_margin) {
                r.min_margin = e.margin;
                r.failing_mask = Z;
            }
            r.risk = r.risk || e.risk;
        } else {
            r.complete = false;
        }
        r.entries.push_back(e);
    }
    return r;
}

// Solves every proper sub-system starting from the matching components of u_star.
inline BlowupReport blowup_risk(const ConformalSystem& sys, const FieldTuple& u_star, const CouplingSpec& spec,
                                const MinimizeOptions& opt = {}) {
    const int ell = u_star.ell();
    std::map<unsigned, double> sub;
    const unsigned all = (1u << ell) - 1;
    for (unsigned S = 1; S < all; ++S) {
        std::vector<int> idx;
        for (int i = 0; i < ell; ++i)
            if (S & (1u << i)) idx.push_back(i);
        FieldTuple u0(u_star.nodes(), static_cast<int>(idx.size()));
        for (std::size_t a = 0; a < idx.size(); ++a) u0.component(static_cast<int>(a)) = u_star.component(idx[a]);
        MinimizeOptions o = opt;
        o.record_trace = false;
        const auto r = minimize(sys, u0, spec.subset(idx), o);
        if (r.converged) sub[S] = r.energy;
    }
    return blowup_risk(nehari_energy(sys, u_star), ell, sys.m(), sub);
}

}  // namespace yamabe
