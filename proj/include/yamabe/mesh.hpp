#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "yamabe/constants.hpp"
#include "yamabe/error.hpp"
#include "yamabe/parallel.hpp"
#include "yamabe/quadrature.hpp"

namespace yamabe {

using SpMat = Eigen::SparseMatrix<double>;

enum class MeshKind { Simplicial, Latitude };

// Latitude grids are cohomogeneity-one reductions of the round S^m.
//   zonal (biaxial_p == 0): t = theta in [0, pi], density omega_{m-1} sin^{m-1} t
//   biaxial (p >= 1): S^m in R^p x R^q, q = m + 1 - p, t = psi in [0, pi/2],
//                     density omega_{p-1} omega_{q-1} cos^{p-1} t sin^{q-1} t
struct MeshMetric {
    MeshKind kind = MeshKind::Latitude;
    int m = 0;
    int default_ell = 1;

    int biaxial_p = 0;
    std::vector<double> t;

    std::vector<Eigen::VectorXd> vertices;
    std::vector<std::vector<int>> cells;
    std::vector<Eigen::Matrix3d> vertex_metric;  // empty: metric induced by the embedding

    std::vector<double> curvature;  // S_g at each node
    std::vector<double> weights;    // lumped nodal measure
    std::vector<std::vector<std::pair<int, double>>> neighbors;

    std::size_t size() const { return weights.size(); }
    double volume() const {
        double s = 0;
        for (double w : weights) s += w;
        return s;
    }
    double t_end() const { return biaxial_p == 0 ? std::numbers::pi : 0.5 * std::numbers::pi; }
    std::string describe() const {
        std::ostringstream os;
        if (kind == MeshKind::Latitude)
            os << (biaxial_p ? "biaxial" : "zonal") << " S^" << m << " grid, " << t.size() << " nodes";
        else
            os << "simplicial " << m << "-manifold, " << vertices.size() << " vertices, " << cells.size() << " cells";
        return os.str();
    }
};

// Component-major storage: column i is u_i.
struct FieldTuple {
    Eigen::MatrixXd values;

    FieldTuple() = default;
    FieldTuple(Eigen::Index nodes, int ell) : values(Eigen::MatrixXd::Zero(nodes, ell)) {}
    explicit FieldTuple(Eigen::MatrixXd v) : values(std::move(v)) {}

    int ell() const { return static_cast<int>(values.cols()); }
    Eigen::Index nodes() const { return values.rows(); }
    auto component(int i) { return values.col(i); }
    auto component(int i) const { return values.col(i); }
};

inline double conformal_factor(int m) { return m >= 2 ? (m - 2.0) / (4.0 * (m - 1.0)) : 0.0; }

inline double latitude_density(const MeshMetric& mesh, double t) {
    const int m = mesh.m;
    if (mesh.biaxial_p == 0) return detail::sphere_volume_any(m - 1) * std::pow(std::sin(t), m - 1);
    const int p = mesh.biaxial_p, q = m + 1 - p;
    return detail::sphere_volume_any(p - 1) * detail::sphere_volume_any(q - 1) * std::pow(std::cos(t), p - 1) *
           std::pow(std::sin(t), q - 1);
}

namespace detail {

inline double density_integral(const MeshMetric& mesh, double a, double b) {
    static const auto rule = [] {
        std::pair<std::vector<double>, std::vector<double>> xw;
        gauss_legendre<20>(xw.first, xw.second);
        return xw;
    }();
    const double c = 0.5 * (a + b), h = 0.5 * (b - a);
    double s = 0;
    for (std::size_t i = 0; i < rule.first.size(); ++i) s += rule.second[i] * latitude_density(mesh, c + h * rule.first[i]);
    return s * h;
}

struct CellGeometry {
    double volume = 0;
    Eigen::MatrixXd stiffness;  // (k+1) x (k+1)
};

inline Eigen::Matrix3d cell_metric(const MeshMetric& mesh, const std::vector<int>& cell) {
    Eigen::Matrix3d g = Eigen::Matrix3d::Zero();
    for (int v : cell) g += mesh.vertex_metric[v];
    return g / static_cast<double>(cell.size());
}

inline CellGeometry cell_geometry(const MeshMetric& mesh, std::size_t c) {
    const auto& cell = mesh.cells[c];
    const int k = static_cast<int>(cell.size()) - 1;
    const auto& v0 = mesh.vertices[cell[0]];
    Eigen::MatrixXd E(v0.size(), k);
    for (int j = 0; j < k; ++j) E.col(j) = mesh.vertices[cell[j + 1]] - v0;
    Eigen::MatrixXd G = mesh.vertex_metric.empty() ? Eigen::MatrixXd(E.transpose() * E)
                                                   : Eigen::MatrixXd(E.transpose() * cell_metric(mesh, cell) * E);
    const double det = G.determinant();
    const double scale = std::pow(G.trace() / k, k);
    if (!(det > 1e-14 * scale)) throw MeshError("degenerate cell " + std::to_string(c) + " (zero volume)");
    double fact = 1;
    for (int j = 2; j <= k; ++j) fact *= j;
    CellGeometry geo;
    geo.volume = std::sqrt(det) / fact;
    Eigen::MatrixXd D = Eigen::MatrixXd::Zero(k + 1, k);
    D.row(0).setConstant(-1.0);
    D.bottomRows(k).setIdentity();
    geo.stiffness = geo.volume * D * G.inverse() * D.transpose();
    return geo;
}

inline double edge_length(const MeshMetric& mesh, int a, int b) {
    const Eigen::VectorXd e = mesh.vertices[b] - mesh.vertices[a];
    if (mesh.vertex_metric.empty()) return e.norm();
    const Eigen::Vector3d e3 = e;
    return std::sqrt(e3.dot(0.5 * (mesh.vertex_metric[a] + mesh.vertex_metric[b]) * e3));
}

inline void check_closed(const MeshMetric& mesh) {
    std::map<std::vector<int>, int> facets;
    for (const auto& cell : mesh.cells) {
        for (std::size_t skip = 0; skip < cell.size(); ++skip) {
            std::vector<int> f;
            for (std::size_t j = 0; j < cell.size(); ++j)
                if (j != skip) f.push_back(cell[j]);
            std::sort(f.begin(), f.end());
            ++facets[f];
        }
    }
    for (const auto& [f, n] : facets) {
        if (n != 2) {
            std::string ids;
            for (int v : f) ids += (ids.empty() ? "" : " ") + std::to_string(v);
            throw MeshError("mesh not closed: facet {" + ids + "} belongs to " + std::to_string(n) + " cell(s)");
        }
    }
}

}  // namespace detail

// Validates a simplicial mesh and fills weights and the edge graph.
inline void finalize_simplicial(MeshMetric& mesh) {
    const std::size_t nv = mesh.vertices.size();
    if (nv == 0 || mesh.cells.empty()) throw MeshError("mesh has no vertices or no cells");
    if (mesh.curvature.size() != nv) throw MeshError("curvature field required (one S_g value per vertex)");
    for (const auto& cell : mesh.cells) {
        if (cell.size() != mesh.cells.front().size()) throw MeshError("cells of mixed arity");
        for (int v : cell)
            if (v < 0 || static_cast<std::size_t>(v) >= nv) throw MeshError("cell references a missing vertex");
    }
    mesh.m = static_cast<int>(mesh.cells.front().size()) - 1;
    if (!mesh.vertex_metric.empty()) {
        if (mesh.vertex_metric.size() != nv) throw MeshError("metric must be given at every vertex");
        for (std::size_t v = 0; v < nv; ++v) {
            const Eigen::Matrix3d& g = mesh.vertex_metric[v];
            if ((g - g.transpose()).norm() > 1e-12 * g.norm() || g.llt().info() != Eigen::Success)
                throw MeshError("metric not symmetric positive definite at vertex " + std::to_string(v));
        }
    }
    for (const auto& x : mesh.vertices)
        if (!mesh.vertex_metric.empty() && x.size() != 3) throw MeshError("metric tensors need 3-D coordinates");
    detail::check_closed(mesh);
    mesh.weights.assign(nv, 0.0);
    std::map<std::pair<int, int>, double> edges;
    for (std::size_t c = 0; c < mesh.cells.size(); ++c) {
        const auto geo = detail::cell_geometry(mesh, c);
        const auto& cell = mesh.cells[c];
        for (int v : cell) mesh.weights[v] += geo.volume / cell.size();
        for (std::size_t a = 0; a < cell.size(); ++a)
            for (std::size_t b = a + 1; b < cell.size(); ++b) {
                const int i = std::min(cell[a], cell[b]), j = std::max(cell[a], cell[b]);
                if (!edges.count({i, j})) edges[{i, j}] = detail::edge_length(mesh, i, j);
            }
    }
    mesh.neighbors.assign(nv, {});
    for (const auto& [e, len] : edges) {
        mesh.neighbors[e.first].push_back({e.second, len});
        mesh.neighbors[e.second].push_back({e.first, len});
    }
}

inline void finalize_latitude(MeshMetric& mesh) {
    const std::size_t n = mesh.t.size();
    const double T = mesh.t_end();
    mesh.weights.assign(n, 0.0);
    mesh.neighbors.assign(n, {});
    for (std::size_t k = 0; k < n; ++k) {
        const double lo = k == 0 ? 0.0 : 0.5 * (mesh.t[k - 1] + mesh.t[k]);
        const double hi = k + 1 == n ? T : 0.5 * (mesh.t[k] + mesh.t[k + 1]);
        mesh.weights[k] = detail::density_integral(mesh, lo, hi);
        if (k + 1 < n) {
            const double h = mesh.t[k + 1] - mesh.t[k];
            mesh.neighbors[k].push_back({static_cast<int>(k + 1), h});
            mesh.neighbors[k + 1].push_back({static_cast<int>(k), h});
        }
    }
}

inline MeshMetric build_latitude_grid(int m, int n_nodes, int biaxial_p) {
    if (m < 2) throw DomainError("latitude grid needs m >= 2");
    if (n_nodes < 16) throw ResolutionError("latitude grid needs at least 16 nodes");
    if (biaxial_p < 0 || biaxial_p > m) throw DomainError("biaxial split p must satisfy 1 <= p <= m");
    MeshMetric mesh;
    mesh.kind = MeshKind::Latitude;
    mesh.m = m;
    mesh.biaxial_p = biaxial_p;
    const double T = mesh.t_end();
    mesh.t.resize(n_nodes);
    for (int k = 0; k < n_nodes; ++k) mesh.t[k] = T * k / (n_nodes - 1);
    mesh.curvature.assign(n_nodes, m * (m - 1.0));
    finalize_latitude(mesh);
    return mesh;
}

inline MeshMetric build_round_sphere(int m, int n_nodes) { return build_latitude_grid(m, n_nodes, 0); }

inline MeshMetric build_biaxial_sphere(int m, int n_nodes, int p = -1) {
    if (p < 0) p = (m + 1) / 2;
    if (p < 1) throw DomainError("biaxial split p must satisfy 1 <= p <= m");
    return build_latitude_grid(m, n_nodes, p);
}

namespace detail {

inline void refine_simplices(MeshMetric& mesh) {
    std::map<std::pair<int, int>, int> mid;
    auto midpoint = [&](int a, int b) {
        const auto key = std::make_pair(std::min(a, b), std::max(a, b));
        auto it = mid.find(key);
        if (it != mid.end()) return it->second;
        Eigen::VectorXd x = 0.5 * (mesh.vertices[a] + mesh.vertices[b]);
        mesh.vertices.push_back(x.normalized());
        const int id = static_cast<int>(mesh.vertices.size()) - 1;
        mid[key] = id;
        return id;
    };
    std::vector<std::vector<int>> out;
    for (const auto& c : mesh.cells) {
        if (c.size() == 3) {
            const int a = midpoint(c[0], c[1]), b = midpoint(c[1], c[2]), d = midpoint(c[0], c[2]);
            out.push_back({c[0], a, d});
            out.push_back({c[1], b, a});
            out.push_back({c[2], d, b});
            out.push_back({a, b, d});
        } else if (c.size() == 4) {
            const int m01 = midpoint(c[0], c[1]), m02 = midpoint(c[0], c[2]), m03 = midpoint(c[0], c[3]);
            const int m12 = midpoint(c[1], c[2]), m13 = midpoint(c[1], c[3]), m23 = midpoint(c[2], c[3]);
            out.push_back({c[0], m01, m02, m03});
            out.push_back({c[1], m01, m12, m13});
            out.push_back({c[2], m02, m12, m23});
            out.push_back({c[3], m03, m13, m23});
            out.push_back({m01, m02, m03, m13});
            out.push_back({m01, m02, m12, m13});
            out.push_back({m02, m03, m13, m23});
            out.push_back({m02, m12, m13, m23});
        } else {
            throw DomainError("refinement is implemented for triangles and tetrahedra only");
        }
    }
    mesh.cells = std::move(out);
}

}  // namespace detail

// Boundary of the cross-polytope in R^{m+1}, projected to the unit sphere after each refinement.
inline MeshMetric build_cross_polytope_sphere(int m, int level = 0) {
    if (m < 2) throw DomainError("cross-polytope sphere needs m >= 2");
    if (level < 0) throw DomainError("refinement level must be >= 0");
    MeshMetric mesh;
    mesh.kind = MeshKind::Simplicial;
    for (int i = 0; i <= m; ++i)
        for (int s : {1, -1}) {
            Eigen::VectorXd x = Eigen::VectorXd::Zero(m + 1);
            x[i] = s;
            mesh.vertices.push_back(x);
        }
    for (unsigned signs = 0; signs < (1u << (m + 1)); ++signs) {
        std::vector<int> cell;
        for (int i = 0; i <= m; ++i) cell.push_back(2 * i + ((signs >> i) & 1u));
        mesh.cells.push_back(cell);
    }
    for (int l = 0; l < level; ++l) detail::refine_simplices(mesh);
    mesh.curvature.assign(mesh.vertices.size(), m * (m - 1.0));
    finalize_simplicial(mesh);
    return mesh;
}

inline MeshMetric build_octahedron_sphere(int level) { return build_cross_polytope_sphere(2, level); }

inline long euler_characteristic(const MeshMetric& mesh) {
    if (mesh.kind != MeshKind::Simplicial) throw DomainError("Euler characteristic needs a simplicial mesh");
    std::vector<std::map<std::vector<int>, int>> faces(mesh.m + 1);
    for (const auto& cell : mesh.cells) {
        const int k = static_cast<int>(cell.size());
        for (unsigned mask = 1; mask < (1u << k); ++mask) {
            std::vector<int> f;
            for (int j = 0; j < k; ++j)
                if (mask & (1u << j)) f.push_back(cell[j]);
            std::sort(f.begin(), f.end());
            faces[f.size() - 1][f] = 1;
        }
    }
    long chi = 0;
    for (std::size_t d = 0; d < faces.size(); ++d) chi += (d % 2 ? -1 : 1) * static_cast<long>(faces[d].size());
    return chi;
}

// ---- quadratic forms ----

struct Forms {
    SpMat stiffness;       // u^T K u ~ int |grad u|^2
    SpMat curvature_mass;  // u^T C u ~ int kappa_m S_g u^2 (lumped)
    SpMat l2_mass;         // lumped
    Eigen::VectorXd weights;

    SpMat conformal() const { return stiffness + curvature_mass; }
};

// int |u|^p by the lumped nodal rule
inline double lp_integral(const Eigen::VectorXd& weights, const Eigen::VectorXd& u, double p) {
    double s = 0;
    for (Eigen::Index k = 0; k < u.size(); ++k) s += weights[k] * std::pow(std::abs(u[k]), p);
    return s;
}

inline Forms assemble_forms(const MeshMetric& mesh, const Execution& ex = default_execution()) {
    const auto n = static_cast<Eigen::Index>(mesh.size());
    if (n == 0) throw MeshError("empty mesh");
    std::vector<Eigen::Triplet<double>> trip;
    if (mesh.kind == MeshKind::Latitude) {
        for (Eigen::Index k = 0; k + 1 < n; ++k) {
            const double h = mesh.t[k + 1] - mesh.t[k];
            const double c = detail::density_integral(mesh, mesh.t[k], mesh.t[k + 1]) / (h * h);
            trip.emplace_back(k, k, c);
            trip.emplace_back(k + 1, k + 1, c);
            trip.emplace_back(k, k + 1, -c);
            trip.emplace_back(k + 1, k, -c);
        }
    } else {
        const std::size_t nc = mesh.cells.size();
        std::vector<std::vector<Eigen::Triplet<double>>> part(chunk_count(nc, ex));
        parallel_chunks(nc, ex, [&](std::size_t chunk, std::size_t b, std::size_t e) {
            for (std::size_t c = b; c < e; ++c) {
                const auto geo = detail::cell_geometry(mesh, c);
                const auto& cell = mesh.cells[c];
                for (std::size_t a = 0; a < cell.size(); ++a)
                    for (std::size_t bb = 0; bb < cell.size(); ++bb)
                        part[chunk].emplace_back(cell[a], cell[bb], geo.stiffness(a, bb));
            }
        });
        for (const auto& p : part) trip.insert(trip.end(), p.begin(), p.end());
    }
    Forms f;
    f.stiffness.resize(n, n);
    f.stiffness.setFromTriplets(trip.begin(), trip.end());
    // symmetrize exactly: entries (i,j) and (j,i) are summed in different orders
    SpMat kt = f.stiffness.transpose();
    f.stiffness = 0.5 * (f.stiffness + kt);
    f.weights = Eigen::Map<const Eigen::VectorXd>(mesh.weights.data(), n);
    const double kap = conformal_factor(mesh.m);
    std::vector<Eigen::Triplet<double>> cm, lm;
    for (Eigen::Index k = 0; k < n; ++k) {
        cm.emplace_back(k, k, kap * mesh.curvature[k] * f.weights[k]);
        lm.emplace_back(k, k, f.weights[k]);
    }
    f.curvature_mass.resize(n, n);
    f.curvature_mass.setFromTriplets(cm.begin(), cm.end());
    f.l2_mass.resize(n, n);
    f.l2_mass.setFromTriplets(lm.begin(), lm.end());
    return f;
}

// ---- spectra by Sylvester inertia ----

namespace detail {

// Number of eigenvalues of A v = s M v below sigma (M diagonal positive).
inline Eigen::Index count_below(const SpMat& A, const Eigen::VectorXd& mdiag, double sigma) {
    SpMat S = A;
    for (Eigen::Index k = 0; k < S.rows(); ++k) S.coeffRef(k, k) -= sigma * mdiag[k];
    Eigen::SimplicialLDLT<SpMat> ldlt(S);
    if (ldlt.info() != Eigen::Success) return -1;
    Eigen::Index neg = 0;
    for (Eigen::Index k = 0; k < ldlt.vectorD().size(); ++k) neg += ldlt.vectorD()[k] < 0;
    return neg;
}

}  // namespace detail

// index-th eigenvalue (0-based, ascending) of A v = s diag(mdiag) v.
inline double generalized_eigenvalue(const SpMat& A, const Eigen::VectorXd& mdiag, Eigen::Index index,
                                     double rel_tol = 1e-11) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Eigen::Index k = 0; k < A.outerSize(); ++k) {
        double diag = 0, off = 0;
        for (SpMat::InnerIterator it(A, k); it; ++it) {
            if (it.row() == k)
                diag += it.value();
            else
                off += std::abs(it.value());
        }
        lo = std::min(lo, (diag - off) / mdiag[k]);
        hi = std::max(hi, (diag + off) / mdiag[k]);
    }
    lo -= 1e-8 * std::max(1.0, std::abs(lo));
    hi += 1e-8 * std::max(1.0, std::abs(hi));
    const double scale = std::max(std::abs(lo), std::abs(hi));
    auto done = [&] { return hi - lo <= rel_tol * std::max(std::abs(lo), std::abs(hi)) + 1e-14 * scale; };
    for (int it = 0; it < 400 && !done(); ++it) {
        double mid = 0.5 * (lo + hi);
        Eigen::Index c = detail::count_below(A, mdiag, mid);
        for (int nudge = 1; c < 0 && nudge < 8; ++nudge) {
            mid += 1e-9 * scale * nudge;
            c = detail::count_below(A, mdiag, mid);
        }
        if (c < 0) throw NumericalError("inertia count failed: singular shifted matrix");
        if (c > index)
            hi = mid;
        else
            lo = mid;
    }
    if (!done()) throw NumericalError("eigenvalue bisection did not converge");
    return 0.5 * (lo + hi);
}

struct CoercivityReport {
    double min_eigenvalue = 0;
    bool coercive = false;
};

inline CoercivityReport coercivity_check(const Forms& f) {
    CoercivityReport r;
    r.min_eigenvalue = generalized_eigenvalue(f.conformal(), f.weights, 0);
    double scale = 0;
    for (Eigen::Index k = 0; k < f.weights.size(); ++k)
        scale = std::max(scale, std::abs(f.curvature_mass.coeff(k, k) / f.weights[k]));
    r.coercive = r.min_eigenvalue > 1e-8 * std::max(1.0, scale);
    return r;
}

inline CoercivityReport coercivity_check(const MeshMetric& mesh) { return coercivity_check(assemble_forms(mesh)); }

// ---- files ----

inline MeshMetric load_mesh(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw MeshError("cannot open mesh file " + path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(in, line);) {
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        if (line.find_first_not_of(" \t\r") != std::string::npos) lines.push_back(line);
    }
    auto tokens = [](const std::string& s) {
        std::istringstream is(s);
        std::vector<std::string> out;
        for (std::string t; is >> t;) out.push_back(t);
        return out;
    };
    auto num = [&](const std::string& s, std::size_t line) {
        try {
            std::size_t used = 0;
            const double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw MeshError(path + ": bad number '" + s + "' on data line " + std::to_string(line + 1));
        }
    };
    if (lines.size() < 2) throw MeshError(path + ": truncated header");
    const auto magic = tokens(lines[0]);
    if (magic.size() != 2 || magic[0] != "YPMESH" || magic[1] != "1") throw MeshError(path + ": expected 'YPMESH 1'");
    const auto head = tokens(lines[1]);
    if (head.size() != 3) throw MeshError(path + ": second line must be 'V F ell'");
    const long nv = static_cast<long>(num(head[0], 1)), nf = static_cast<long>(num(head[1], 1));
    const long ell = static_cast<long>(num(head[2], 1));
    if (nv <= 0 || nf <= 0 || ell < 1) throw MeshError(path + ": V, F must be positive and ell >= 1");
    if (static_cast<long>(lines.size()) != 2 + nv + nf)
        throw MeshError(path + ": expected " + std::to_string(nv + nf) + " data lines, found " +
                        std::to_string(lines.size() - 2));
    MeshMetric mesh;
    mesh.kind = MeshKind::Simplicial;
    mesh.default_ell = static_cast<int>(ell);
    std::size_t width = 0;
    for (long v = 0; v < nv; ++v) {
        const auto tk = tokens(lines[2 + v]);
        if (v == 0) width = tk.size();
        if (tk.size() != width) throw MeshError(path + ": vertex lines have inconsistent column counts");
        if (width == 3 || width == 9) throw MeshError(path + ": curvature field required (S_g column missing)");
        if (width != 4 && width != 10)
            throw MeshError(path + ": vertex line must be 'x y z [6 metric values] S_g'");
        Eigen::VectorXd x(3);
        for (int j = 0; j < 3; ++j) x[j] = num(tk[j], 2 + v);
        mesh.vertices.push_back(x);
        if (width == 10) {
            const double g[6] = {num(tk[3], 2 + v), num(tk[4], 2 + v), num(tk[5], 2 + v),
                                 num(tk[6], 2 + v), num(tk[7], 2 + v), num(tk[8], 2 + v)};
            Eigen::Matrix3d G;
            G << g[0], g[1], g[2], g[1], g[3], g[4], g[2], g[4], g[5];
            mesh.vertex_metric.push_back(G);
        }
        mesh.curvature.push_back(num(tk.back(), 2 + v));
    }
    for (long f = 0; f < nf; ++f) {
        const auto tk = tokens(lines[2 + nv + f]);
        if (tk.size() != 3 && tk.size() != 4) throw MeshError(path + ": cells must list 3 or 4 vertex indices");
        std::vector<int> cell;
        for (const auto& s : tk) {
            const double d = num(s, 2 + nv + f);
            if (d != std::floor(d)) throw MeshError(path + ": non-integer vertex index");
            cell.push_back(static_cast<int>(d));
        }
        mesh.cells.push_back(cell);
    }
    finalize_simplicial(mesh);
    return mesh;
}

inline void save_mesh(const std::string& path, const MeshMetric& mesh) {
    if (mesh.kind != MeshKind::Simplicial) throw MeshError("only simplicial meshes have a file format");
    for (const auto& x : mesh.vertices)
        if (x.size() != 3) throw MeshError("mesh files store 3-D coordinates");
    std::ofstream out(path);
    if (!out) throw MeshError("cannot write " + path);
    out.precision(17);
    out << "YPMESH 1\n" << mesh.vertices.size() << ' ' << mesh.cells.size() << ' ' << mesh.default_ell << '\n';
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const auto& x = mesh.vertices[v];
        out << x[0] << ' ' << x[1] << ' ' << x[2];
        if (!mesh.vertex_metric.empty()) {
            const auto& g = mesh.vertex_metric[v];
            out << ' ' << g(0, 0) << ' ' << g(0, 1) << ' ' << g(0, 2) << ' ' << g(1, 1) << ' ' << g(1, 2) << ' '
                << g(2, 2);
        }
        out << ' ' << mesh.curvature[v] << '\n';
    }
    for (const auto& c : mesh.cells) {
        for (std::size_t j = 0; j < c.size(); ++j) out << (j ? " " : "") << c[j];
        out << '\n';
    }
}

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline void write_checkpoint(const std::string& path, const FieldTuple& u) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint " + path);
    out.write("YPFLD1", 6);
    const std::uint32_t ell = static_cast<std::uint32_t>(u.ell()), n = static_cast<std::uint32_t>(u.nodes());
    out.write(reinterpret_cast<const char*>(&ell), 4);
    out.write(reinterpret_cast<const char*>(&n), 4);
    for (std::uint32_t k = 0; k < n; ++k)
        for (std::uint32_t i = 0; i < ell; ++i) {
            const double v = u.values(k, i);
            out.write(reinterpret_cast<const char*>(&v), 8);
        }
    if (!out) throw std::runtime_error("short write on checkpoint " + path);
}

inline FieldTuple read_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint " + path);
    char magic[6];
    in.read(magic, 6);
    if (!in || std::memcmp(magic, "YPFLD1", 6) != 0) throw std::runtime_error(path + ": not a YPFLD1 checkpoint");
    std::uint32_t ell = 0, n = 0;
    in.read(reinterpret_cast<char*>(&ell), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    if (!in || ell == 0) throw std::runtime_error(path + ": bad checkpoint header");
    FieldTuple u(n, static_cast<int>(ell));
    for (std::uint32_t k = 0; k < n; ++k)
        for (std::uint32_t i = 0; i < ell; ++i) {
            double v;
            in.read(reinterpret_cast<char*>(&v), 8);
            u.values(k, i) = v;
        }
    if (!in) throw std::runtime_error(path + ": truncated checkpoint");
    return u;
}

// Mesh specs: zonal:m:n, biaxial:m:n[:p], cross:m[:level], octa:level, or a YPMESH file path.
inline MeshMetric make_mesh(const std::string& spec) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    auto arg = [&](std::size_t i) {
        try {
            return std::stoi(parts.at(i));
        } catch (const std::exception&) {
            throw ConfigError("bad mesh spec '" + spec + "'");
        }
    };
    const std::string kind = parts.empty() ? "" : parts[0];
    if (kind == "zonal" && parts.size() == 3) return build_round_sphere(arg(1), arg(2));
    if (kind == "biaxial" && (parts.size() == 3 || parts.size() == 4))
        return build_biaxial_sphere(arg(1), arg(2), parts.size() == 4 ? arg(3) : -1);
    if (kind == "cross" && (parts.size() == 2 || parts.size() == 3))
        return build_cross_polytope_sphere(arg(1), parts.size() == 3 ? arg(2) : 0);
    if (kind == "octa" && parts.size() == 2) return build_octahedron_sphere(arg(1));
    return load_mesh(spec);
}

}  // namespace yamabe
