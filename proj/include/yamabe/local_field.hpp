#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "yamabe/error.hpp"

namespace yamabe {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Reaction term f_i(x, s) of a local system.
using Reaction = std::function<double(const Vec& x, int component, double s)>;

// Regular Cartesian samples of an ell-tuple on a box; dimension 0 varies fastest.
struct GridField {
    int m = 0;
    int ell = 1;
    Vec lo;
    double h = 0.0;
    std::vector<int> n;
    Mat values;  // nodes x ell

    std::size_t nodes() const { return static_cast<std::size_t>(values.rows()); }

    std::size_t index(const std::vector<int>& idx) const {
        std::size_t k = 0, stride = 1;
        for (int d = 0; d < m; ++d) {
            k += stride * static_cast<std::size_t>(idx[d]);
            stride *= static_cast<std::size_t>(n[d]);
        }
        return k;
    }

    Vec node(std::size_t k) const {
        Vec x(m);
        for (int d = 0; d < m; ++d) {
            x[d] = lo[d] + h * static_cast<double>(k % n[d]);
            k /= n[d];
        }
        return x;
    }

    Vec hi() const {
        Vec x(m);
        for (int d = 0; d < m; ++d) x[d] = lo[d] + h * (n[d] - 1);
        return x;
    }

    static GridField sample(int m, int ell, const Vec& lo, double h, const std::vector<int>& n,
                            const std::function<Vec(const Vec&)>& f) {
        if (m < 1 || static_cast<int>(n.size()) != m || lo.size() != m)
            throw ShapeError("grid dimension does not match its extents");
        GridField g;
        g.m = m;
        g.ell = ell;
        g.lo = lo;
        g.h = h;
        g.n = n;
        std::size_t total = 1;
        for (int c : n) {
            if (c < 4) throw ShapeError("grid needs at least 4 nodes per direction");
            total *= static_cast<std::size_t>(c);
        }
        g.values.resize(static_cast<Eigen::Index>(total), ell);
        for (std::size_t k = 0; k < total; ++k) {
            const Vec v = f(g.node(k));
            if (v.size() != ell) throw ShapeError("sampled value has the wrong number of components");
            g.values.row(static_cast<Eigen::Index>(k)) = v.transpose();
        }
        return g;
    }

    // Square/cube grid of side 2*half with cells per direction.
    static GridField centered(int m, int ell, double half, int cells, const std::function<Vec(const Vec&)>& f) {
        return sample(m, ell, Vec::Constant(m, -half), 2.0 * half / cells, std::vector<int>(m, cells + 1), f);
    }
};

namespace detail {

struct StencilWeight {
    int index;
    double w;
    double dw;
};

// Catmull-Rom weights along one axis. Ghost nodes past the ends are quadratic extrapolations,
// so quadratics are reproduced everywhere on the grid.
inline std::vector<StencilWeight> catmull_rom_axis(double s, int n) {
    int i = static_cast<int>(std::floor(s));
    if (i < 0) i = 0;
    if (i > n - 2) i = n - 2;
    const double t = s - i;
    const double t2 = t * t, t3 = t2 * t;
    const double w[4] = {0.5 * (-t3 + 2 * t2 - t), 0.5 * (3 * t3 - 5 * t2 + 2), 0.5 * (-3 * t3 + 4 * t2 + t),
                         0.5 * (t3 - t2)};
    const double dw[4] = {0.5 * (-3 * t2 + 4 * t - 1), 0.5 * (9 * t2 - 10 * t), 0.5 * (-9 * t2 + 8 * t + 1),
                          0.5 * (3 * t2 - 2 * t)};
    std::vector<StencilWeight> out;
    out.reserve(6);
    for (int k = 0; k < 4; ++k) {
        const int j = i - 1 + k;
        if (j < 0) {
            out.push_back({0, 3 * w[k], 3 * dw[k]});
            out.push_back({1, -3 * w[k], -3 * dw[k]});
            out.push_back({2, w[k], dw[k]});
        } else if (j > n - 1) {
            out.push_back({n - 1, 3 * w[k], 3 * dw[k]});
            out.push_back({n - 2, -3 * w[k], -3 * dw[k]});
            out.push_back({n - 3, w[k], dw[k]});
        } else {
            out.push_back({j, w[k], dw[k]});
        }
    }
    return out;
}

}  // namespace detail

// Tensor Catmull-Rom interpolant of a grid field: value (ell) and gradient (ell x m).
inline void interpolate(const GridField& g, const Vec& x, Vec& value, Mat& grad) {
    const int m = g.m;
    if (x.size() != m) throw ShapeError("point dimension does not match the grid");
    std::vector<std::vector<detail::StencilWeight>> axes(m);
    for (int d = 0; d < m; ++d) {
        const double s = (x[d] - g.lo[d]) / g.h;
        if (s < -1e-12 || s > g.n[d] - 1 + 1e-12) throw DomainError("point outside the grid");
        axes[d] = detail::catmull_rom_axis(s, g.n[d]);
    }
    value = Vec::Zero(g.ell);
    grad = Mat::Zero(g.ell, m);
    std::vector<std::size_t> pos(m, 0);
    std::vector<int> idx(m);
    Vec partial(m);
    while (true) {
        double w = 1.0;
        for (int d = 0; d < m; ++d) {
            idx[d] = axes[d][pos[d]].index;
            w *= axes[d][pos[d]].w;
        }
        for (int d = 0; d < m; ++d) {
            double p = axes[d][pos[d]].dw / g.h;
            for (int e = 0; e < m; ++e)
                if (e != d) p *= axes[e][pos[e]].w;
            partial[d] = p;
        }
        const auto row = g.values.row(static_cast<Eigen::Index>(g.index(idx)));
        value += w * row.transpose();
        grad += row.transpose() * partial.transpose();
        int d = 0;
        while (d < m && ++pos[d] == axes[d].size()) {
            pos[d] = 0;
            ++d;
        }
        if (d == m) break;
    }
}

// An ell-tuple of functions on a Euclidean domain with its gradients.
struct LocalField {
    int m = 0;
    int ell = 1;
    std::function<void(const Vec& x, Vec& value, Mat& grad)> eval;

    Vec value(const Vec& x) const {
        Vec v;
        Mat g;
        eval(x, v, g);
        return v;
    }

    static LocalField analytic(int m, int ell, std::function<void(const Vec&, Vec&, Mat&)> f) {
        return LocalField{m, ell, std::move(f)};
    }

    static LocalField from_grid(GridField g) {
        auto shared = std::make_shared<const GridField>(std::move(g));
        LocalField f;
        f.m = shared->m;
        f.ell = shared->ell;
        f.eval = [shared](const Vec& x, Vec& v, Mat& grad) { interpolate(*shared, x, v, grad); };
        return f;
    }
};

// v(x) = u(x0 + S x), so grad v = (grad u) S.
inline LocalField pulled_back(const LocalField& u, const Vec& x0, const Mat& S) {
    LocalField v;
    v.m = u.m;
    v.ell = u.ell;
    v.eval = [u, x0, S](const Vec& x, Vec& val, Mat& grad) {
        Mat g;
        u.eval(x0 + S * x, val, g);
        grad = g * S;
    };
    return v;
}

}  // namespace yamabe
