#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <queue>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "yamabe/constants.hpp"
#include "yamabe/error.hpp"
#include "yamabe/mesh.hpp"
#include "yamabe/nehari.hpp"
#include "yamabe/parallel.hpp"

namespace yamabe {

struct LambdaSchedule {
    double lambda0 = -1.0;
    double ratio = 4.0;
    int steps = 10;

    void validate() const {
        if (!(lambda0 < 0) || !std::isfinite(lambda0)) throw DomainError("couplings must be negative");
        if (!(ratio > 1) || !std::isfinite(ratio)) throw DomainError("schedule ratio must exceed 1");
        if (steps < 1) throw DomainError("schedule needs at least one step");
        if (!std::isfinite(lambda0 * std::pow(ratio, steps - 1))) throw DomainError("schedule overflows");
    }
    std::vector<double> values() const {
        validate();
        std::vector<double> v;
        for (int k = 0; k < steps; ++k) v.push_back(lambda0 * std::pow(ratio, k));
        return v;
    }
    bool operator==(const LambdaSchedule&) const = default;
};

// ---- graph helpers ----

namespace detail {

// Multi-source Dijkstra; origin[v] receives the source nearest to v when requested.
inline std::vector<double> graph_distances(const MeshMetric& mesh, const std::vector<int>& sources,
                                           std::vector<int>* origin = nullptr) {
    std::vector<double> d(mesh.size(), std::numeric_limits<double>::infinity());
    std::vector<int> from(mesh.size(), -1);
    using Item = std::pair<double, int>;
    std::priority_queue<Item, std::vector<Item>, std::greater<>> pq;
    for (int s : sources) {
        d[s] = 0;
        from[s] = s;
        pq.push({0.0, s});
    }
    while (!pq.empty()) {
        auto [dist, v] = pq.top();
        pq.pop();
        if (dist > d[v]) continue;
        for (const auto& [w, len] : mesh.neighbors[v])
            if (dist + len < d[w]) {
                d[w] = dist + len;
                from[w] = from[v];
                pq.push({d[w], w});
            }
    }
    if (origin) *origin = std::move(from);
    return d;
}

inline std::vector<int> hop_distances(const MeshMetric& mesh, const std::vector<int>& sources) {
    std::vector<int> d(mesh.size(), std::numeric_limits<int>::max());
    std::deque<int> q;
    for (int s : sources) {
        d[s] = 0;
        q.push_back(s);
    }
    while (!q.empty()) {
        const int v = q.front();
        q.pop_front();
        for (const auto& nb : mesh.neighbors[v])
            if (d[nb.first] == std::numeric_limits<int>::max()) {
                d[nb.first] = d[v] + 1;
                q.push_back(nb.first);
            }
    }
    return d;
}

// Connected components of the subgraph induced by the nodes with in_set true.
inline int component_count(const MeshMetric& mesh, const std::vector<bool>& in_set) {
    std::vector<bool> seen(mesh.size(), false);
    int count = 0;
    for (std::size_t s = 0; s < mesh.size(); ++s) {
        if (!in_set[s] || seen[s]) continue;
        ++count;
        std::deque<int> q{static_cast<int>(s)};
        seen[s] = true;
        while (!q.empty()) {
            const int v = q.front();
            q.pop_front();
            for (const auto& nb : mesh.neighbors[v])
                if (in_set[nb.first] && !seen[nb.first]) {
                    seen[nb.first] = true;
                    q.push_back(nb.first);
                }
        }
    }
    return count;
}

}  // namespace detail

// ---- segregation integrals ----

// M_ij = lambda int u_i^beta u_j^beta, zero diagonal.
inline Eigen::MatrixXd segregation_integral(const FieldTuple& u, double lambda, const Eigen::VectorXd& weights,
                                            double beta) {
    if (u.nodes() != weights.size()) throw ShapeError("field and weights sizes differ");
    const int ell = u.ell();
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(ell, ell);
    for (int i = 0; i < ell; ++i)
        for (int j = i + 1; j < ell; ++j) {
            M(i, j) = lambda * detail::coupling_integral(weights, u.component(j), u.component(i), beta, beta);
            M(j, i) = M(i, j);
        }
    return M;
}

inline Eigen::MatrixXd segregation_integral(const FieldTuple& u, double lambda, const MeshMetric& mesh) {
    return segregation_integral(u, lambda, Eigen::Map<const Eigen::VectorXd>(mesh.weights.data(), mesh.size()),
                                critical_exponent(mesh.m) / 2.0);
}

inline double max_off_diagonal(const Eigen::MatrixXd& M) {
    double v = 0;
    for (Eigen::Index i = 0; i < M.rows(); ++i)
        for (Eigen::Index j = 0; j < M.cols(); ++j)
            if (i != j) v = std::max(v, std::abs(M(i, j)));
    return v;
}

// ---- Hoelder seminorm ----

// max over sampled pairs of |u(x) - u(y)| / d(x, y)^alpha, d the graph-geodesic distance. Samples: every edge,
// plus all nodes against up to `sources` evenly spaced source nodes.
inline double holder_estimate(const FieldTuple& u, double alpha, const MeshMetric& mesh, int sources = 64,
                              const Execution& ex = default_execution()) {
    if (!(alpha > 0 && alpha < 1)) throw DomainError("Hoelder exponent must lie in (0, 1)");
    if (static_cast<std::size_t>(u.nodes()) != mesh.size()) throw ShapeError("field and mesh sizes differ");
    const std::size_t n = mesh.size();
    double best = 0;
    for (std::size_t a = 0; a < n; ++a)
        for (const auto& [b, len] : mesh.neighbors[a])
            for (int i = 0; i < u.ell(); ++i)
                best = std::max(best, std::abs(u.values(a, i) - u.values(b, i)) / std::pow(len, alpha));
    const std::size_t ns = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(sources, 1)));
    std::vector<double> part(chunk_count(ns, ex), 0.0);
    parallel_chunks(ns, ex, [&](std::size_t chunk, std::size_t b, std::size_t e) {
        for (std::size_t s = b; s < e; ++s) {
            const int src = static_cast<int>(ns == 1 ? 0 : s * (n - 1) / (ns - 1));
            const auto d = detail::graph_distances(mesh, {src});
            for (std::size_t v = 0; v < n; ++v) {
                if (!(d[v] > 0) || !std::isfinite(d[v])) continue;
                const double den = std::pow(d[v], alpha);
                for (int i = 0; i < u.ell(); ++i)
                    part[chunk] = std::max(part[chunk], std::abs(u.values(v, i) - u.values(src, i)) / den);
            }
        }
    });
    for (double p : part) best = std::max(best, p);
    return best;
}

// ---- lambda continuation ----

struct ContinuationStep {
    double lambda = 0;
    bool converged = false;
    int substeps = 0;
    int iterations = 0;
    double energy = 0;          // Psi at the solution
    double nehari_energy = 0;   // (1/m) sum ||u_i||^2
    Eigen::MatrixXd segregation;
    double max_overlap = 0;     // max off-diagonal |lambda int u_i^beta u_j^beta|
    double frobenius = 0;
    double raw_overlap_measure = 0;  // measure of {u_i > tau} cap {u_j > tau}, tau = 1e-3 max
    double holder = 0;
    double grad_norm = 0;
    double nehari_residual = 0;
    FieldTuple u;
    std::string failure;
};

struct ContinuationOptions {
    MinimizeOptions solver;
    double holder_alpha = 0.9;
    int max_bisections = 12;
    int max_substeps = 48;  // solves per schedule step, across all bisection levels
};

struct ContinuationResult {
    std::vector<ContinuationStep> steps;
    bool complete = true;
    std::string failure;
};

inline double raw_overlap_measure(const FieldTuple& u, const Eigen::VectorXd& w, double rel_tau = 1e-3) {
    const double tau = rel_tau * u.values.cwiseAbs().maxCoeff();
    double meas = 0;
    for (Eigen::Index k = 0; k < u.nodes(); ++k) {
        int above = 0;
        for (int i = 0; i < u.ell(); ++i) above += u.values(k, i) > tau;
        if (above >= 2) meas += w[k];
    }
    return meas;
}

// Warm-started solves along the schedule. A step that fails from the previous solution is retried through
// geometric intermediate couplings.
// `base` supplies the exponents; its couplings are replaced by the schedule values.
inline ContinuationResult continue_lambda(const ConformalSystem& sys, const MeshMetric& mesh, const FieldTuple& u0,
                                          const LambdaSchedule& schedule, const CouplingSpec& base,
                                          const ContinuationOptions& opt = {}) {
    const auto lambdas = schedule.values();
    base.with_lambda(lambdas.front()).validate(sys.m());
    ContinuationResult res;
    FieldTuple current = u0;
    double prev_lambda = lambdas.front();
    for (std::size_t k = 0; k < lambdas.size(); ++k) {
        const double target = lambdas[k];
        ContinuationStep step;
        step.lambda = target;
        std::function<bool(double, double, const FieldTuple&, int, MinimizeResult&)> reach;
        reach = [&](double from, double to, const FieldTuple& start, int depth, MinimizeResult& out) {
            out = minimize(sys, start, base.with_lambda(to), opt.solver);
            ++step.substeps;
            step.iterations += out.iterations;
            if (out.converged || u0.ell() == 1) return out.converged;
            if (depth >= opt.max_bisections || step.substeps >= opt.max_substeps || from == to) return false;
            const double mid = -std::sqrt(from * to);
            MinimizeResult half;
            if (!reach(from, mid, start, depth + 1, half)) return false;
            return reach(mid, to, half.u, depth + 1, out);
        };
        MinimizeResult r;
        const bool ok = reach(prev_lambda, target, current, 0, r);
        step.converged = ok;
        if (!ok) {
            step.failure = r.diagnostic.empty() ? "solver did not converge" : r.diagnostic;
            res.steps.push_back(step);
            res.complete = false;
            res.failure = "solver failed at lambda = " + std::to_string(target) + ": " + step.failure;
            return res;
        }
        step.u = r.u;
        step.energy = r.energy;
        step.nehari_energy = nehari_energy(sys, r.u);
        step.grad_norm = r.grad_norm;
        step.nehari_residual = r.nehari_residual;
        step.segregation = segregation_integral(r.u, target, sys.weights(), sys.two_star() / 2.0);
        step.max_overlap = max_off_diagonal(step.segregation);
        step.frobenius = step.segregation.norm();
        step.raw_overlap_measure = raw_overlap_measure(r.u, sys.weights());
        step.holder = holder_estimate(r.u, opt.holder_alpha, mesh);
        res.steps.push_back(step);
        current = r.u;
        prev_lambda = target;
    }
    return res;
}

inline ContinuationResult continue_lambda(const ConformalSystem& sys, const MeshMetric& mesh, const FieldTuple& u0,
                                          const LambdaSchedule& schedule, const ContinuationOptions& opt = {}) {
    return continue_lambda(sys, mesh, u0, schedule, CouplingSpec::symmetric(u0.ell(), sys.m(), schedule.lambda0), opt);
}

// ---- partitions ----

struct PartitionResult {
    double tau = 0;
    std::vector<int> label;  // support index, or -1 on the interface
    std::vector<std::vector<int>> supports;
    std::vector<int> interface;
    std::vector<double> energies;            // c_i = (1/m) ||u_i||^2; sums to J on the Nehari set
    std::vector<double> truncated_energies;  // (1/m) ||u_i 1_{Omega_i}||^2, grows like 1/h while u_i overlaps
    double total = 0;
    std::vector<int> components;  // connected components per support
    std::vector<double> measures;
    double interface_measure = 0;
    double raw_overlap_measure = 0;  // before dominance, for reference

    bool all_connected() const {
        return std::all_of(components.begin(), components.end(), [](int c) { return c == 1; });
    }
};

inline double default_tau(const FieldTuple& u) { return 1e-3 * u.values.cwiseAbs().maxCoeff(); }

// Supports from the dominance profiles (u_i - max_{j != i} u_j)^+ thresholded at tau; the interface is the set of
// nodes where no profile exceeds tau.
inline PartitionResult extract_partition(const ConformalSystem& sys, const MeshMetric& mesh, const FieldTuple& u,
                                         double tau) {
    if (static_cast<std::size_t>(u.nodes()) != mesh.size() || u.nodes() != sys.size())
        throw ShapeError("field and mesh sizes differ");
    if (!(tau >= 0)) throw DomainError("tau must be >= 0");
    const int ell = u.ell();
    PartitionResult p;
    p.tau = tau;
    p.label.assign(mesh.size(), -1);
    p.supports.assign(ell, {});
    std::vector<double> dominance(mesh.size(), 0.0);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        int best = -1;
        double top = -std::numeric_limits<double>::infinity(), second = -std::numeric_limits<double>::infinity();
        for (int i = 0; i < ell; ++i) {
            const double v = u.values(k, i);
            if (v > top) {
                second = top;
                top = v;
                best = i;
            } else if (v > second) {
                second = v;
            }
        }
        dominance[k] = ell == 1 ? top : top - std::max(second, 0.0);
        if (top > tau && dominance[k] > tau) p.label[k] = best;
    }
    // supports that touch along an edge are separated by moving the weaker endpoint to the interface
    for (std::size_t a = 0; a < mesh.size(); ++a)
        for (const auto& nb : mesh.neighbors[a]) {
            const int b = nb.first;
            if (p.label[a] >= 0 && p.label[b] >= 0 && p.label[a] != p.label[b]) {
                if (dominance[a] < dominance[b] || (dominance[a] == dominance[b] && static_cast<int>(a) < b))
                    p.label[a] = -1;
                else
                    p.label[b] = -1;
            }
        }
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        if (p.label[k] >= 0) {
            p.supports[p.label[k]].push_back(static_cast<int>(k));
        } else {
            p.interface.push_back(static_cast<int>(k));
            p.interface_measure += mesh.weights[k];
        }
    }
    for (int i = 0; i < ell; ++i)
        if (p.supports[i].empty())
            throw DegeneratePartitionError("component " + std::to_string(i) + " has an empty support at tau = " +
                                           std::to_string(tau));
    p.raw_overlap_measure = raw_overlap_measure(u, sys.weights());
    for (int i = 0; i < ell; ++i) {
        Eigen::VectorXd ui = Eigen::VectorXd::Zero(u.nodes());
        std::vector<bool> in(mesh.size(), false);
        double meas = 0;
        for (int k : p.supports[i]) {
            ui[k] = u.values(k, i);
            in[k] = true;
            meas += mesh.weights[k];
        }
        p.truncated_energies.push_back(sys.norm_sq(ui) / sys.m());
        p.energies.push_back(sys.norm_sq(u.component(i)) / sys.m());
        p.total += p.energies.back();
        p.measures.push_back(meas);
        p.components.push_back(detail::component_count(mesh, in));
    }
    return p;
}

// Re-solves the single equation on each support with homogeneous Dirichlet data on its complement.
inline std::vector<double> partition_consistency(const ConformalSystem& sys, const FieldTuple& u,
                                                 const PartitionResult& p, const MinimizeOptions& opt = {}) {
    std::vector<double> out;
    for (std::size_t i = 0; i < p.supports.size(); ++i) {
        std::vector<bool> keep(sys.size(), false);
        for (int k : p.supports[i]) keep[k] = true;
        std::vector<int> index;
        const ConformalSystem sub = sys.restrict(keep, &index);
        FieldTuple u0(static_cast<Eigen::Index>(index.size()), 1);
        for (std::size_t k = 0; k < index.size(); ++k) u0.values(k, 0) = std::abs(u.values(index[k], i)) + 1e-12;
        MinimizeOptions o = opt;
        o.record_trace = false;
        const auto r = minimize(sub, u0, CouplingSpec::symmetric(1, sys.m(), -1.0), o);
        out.push_back(r.converged ? r.energy : std::numeric_limits<double>::quiet_NaN());
    }
    return out;
}

// ---- interface ----

struct InterfaceNode {
    int node = 0;
    int i = 0, j = 0;
    double grad_i = 0, grad_j = 0;
    double mismatch = 0;  // |g_i - g_j| / max(g_i, g_j)
    bool singular = false;
};

struct InterfaceReport {
    std::vector<InterfaceNode> nodes;
    double median_mismatch = 0;
    double epsilon = 0;
    int singular_count = 0;
};

namespace detail {

inline double median(std::vector<double> v) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Largest slope of u along edges from node y into nodes of the same support.
inline double one_sided_slope(const MeshMetric& mesh, const Eigen::VectorXd& u, const std::vector<int>& label, int y) {
    double g = 0;
    for (const auto& [z, len] : mesh.neighbors[y])
        if (label[z] == label[y]) g = std::max(g, std::abs(u[z] - u[y]) / len);
    return g;
}

}  // namespace detail

// For each interface node, the one-sided gradients of the two nearest supports, sampled at the support node
// closest to it.
inline InterfaceReport interface_diagnostics(const MeshMetric& mesh, const FieldTuple& u, const PartitionResult& p) {
    InterfaceReport rep;
    const int ell = u.ell();
    if (ell < 2 || p.interface.empty()) return rep;
    std::vector<std::vector<double>> dist(ell);
    std::vector<std::vector<int>> nearest(ell);
    for (int i = 0; i < ell; ++i) dist[i] = detail::graph_distances(mesh, p.supports[i], &nearest[i]);
    std::vector<double> interior_err;
    for (int i = 0; i < ell; ++i) {
        const Eigen::VectorXd ui = u.component(i);
        for (int y : p.supports[i]) {
            double lo = std::numeric_limits<double>::infinity(), hi = 0;
            int cnt = 0;
            for (const auto& [z, len] : mesh.neighbors[y]) {
                if (p.label[z] != i) {
                    cnt = -100;
                    break;
                }
                const double s = std::abs(ui[z] - ui[y]) / len;
                lo = std::min(lo, s);
                hi = std::max(hi, s);
                ++cnt;
            }
            if (cnt >= 2) interior_err.push_back(hi - lo);
        }
    }
    rep.epsilon = 10.0 * (interior_err.empty() ? 0.0 : detail::median(interior_err));
    std::vector<double> mism;
    for (int g : p.interface) {
        std::vector<std::pair<double, int>> order;
        for (int i = 0; i < ell; ++i)
            if (nearest[i][g] >= 0) order.push_back({dist[i][g], i});
        if (order.size() < 2) continue;
        std::sort(order.begin(), order.end());
        InterfaceNode node;
        node.node = g;
        node.i = std::min(order[0].second, order[1].second);
        node.j = std::max(order[0].second, order[1].second);
        node.grad_i = detail::one_sided_slope(mesh, u.component(node.i), p.label, nearest[node.i][g]);
        node.grad_j = detail::one_sided_slope(mesh, u.component(node.j), p.label, nearest[node.j][g]);
        const double top = std::max(node.grad_i, node.grad_j);
        node.mismatch = top > 0 ? std::abs(node.grad_i - node.grad_j) / top : 0.0;
        node.singular = top <= rep.epsilon;
        rep.singular_count += node.singular;
        if (!node.singular) mism.push_back(node.mismatch);
        rep.nodes.push_back(node);
    }
    rep.median_mismatch = mism.empty() ? 0.0 : detail::median(mism);
    return rep;
}

// ---- nodal solution ----

struct NodalReport {
    Eigen::VectorXd w;
    int positive_domains = 0;
    int negative_domains = 0;
    double energy = 0;        // (1/m)(||u_1||^2 + ||u_2||^2)
    double residual = 0;      // dual-norm residual of L w - |w|^{2*-2} w on interior nodes, relative to ||w||
    int interior_nodes = 0;
    std::string warning;
};

// Relative dual-norm residual sqrt(R^T A^{-1} R) / ||w|| of the single Yamabe equation, R masked to `mask`.
inline double yamabe_residual(const ConformalSystem& sys, const Eigen::VectorXd& w, const std::vector<bool>& mask) {
    const auto& wt = sys.weights();
    Eigen::VectorXd R = sys.apply(w);
    for (Eigen::Index k = 0; k < w.size(); ++k) {
        R[k] -= wt[k] * detail::spow(w[k], sys.two_star() - 2.0) * w[k];
        if (!mask[k]) R[k] = 0.0;
    }
    const double nw = std::sqrt(sys.norm_sq(w));
    return nw > 0 ? std::sqrt(std::max(0.0, R.dot(sys.solve(R)))) / nw : 0.0;
}

inline NodalReport nodal_solution(const ConformalSystem& sys, const MeshMetric& mesh, const FieldTuple& u,
                                  const PartitionResult& p) {
    if (u.ell() != 2) throw ShapeError("nodal solution needs exactly two components");
    NodalReport r;
    r.w = u.component(0) - u.component(1);
    std::vector<bool> pos(mesh.size()), neg(mesh.size());
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        pos[k] = r.w[k] > 0;
        neg[k] = r.w[k] < 0;
    }
    r.positive_domains = detail::component_count(mesh, pos);
    r.negative_domains = detail::component_count(mesh, neg);
    if (r.positive_domains + r.negative_domains > 2)
        r.warning = "more than two nodal domains (" + std::to_string(r.positive_domains + r.negative_domains) + ")";
    r.energy = nehari_energy(sys, u);
    const auto hops = detail::hop_distances(mesh, p.interface);
    std::vector<bool> mask(mesh.size(), false);
    for (std::size_t k = 0; k < mesh.size(); ++k)
        if (p.interface.empty() || hops[k] >= 2) {
            mask[k] = true;
            ++r.interior_nodes;
        }
    r.residual = yamabe_residual(sys, r.w, mask);
    return r;
}

// 0 < u1(p) < (5/567)|W(p)|^2, with the constant derived from the m = 10 balance of the energy expansion.
inline bool threshold_check_m10(double u1_min, double weyl_sq) {
    if (!(weyl_sq >= 0)) throw DomainError("squared Weyl norm must be >= 0");
    return u1_min > 0 && u1_min < weyl_balance_coefficient(10) * weyl_sq;
}

// c_l estimate against min_k {c_k* + (l - k) sigma^{m/2} / m}; c_star[k-1] holds c_k*.
struct AssumptionCheck {
    double lhs = 0;
    double rhs = std::numeric_limits<double>::infinity();
    int argmin_k = 0;
    bool holds = false;
};

inline AssumptionCheck assumption_check(double c_ell, const std::vector<double>& c_star, int m) {
    AssumptionCheck a;
    a.lhs = c_ell;
    const int ell = static_cast<int>(c_star.size()) + 1;
    const double bubble = std::pow(sobolev_constant(m), m / 2.0) / m;
    for (int k = 1; k < ell; ++k) {
        const double v = c_star[k - 1] + (ell - k) * bubble;
        if (v < a.rhs) {
            a.rhs = v;
            a.argmin_k = k;
        }
    }
    a.holds = a.lhs < a.rhs;
    return a;
}

}  // namespace yamabe
