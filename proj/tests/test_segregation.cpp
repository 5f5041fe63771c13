#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "yamabe/segregation.hpp"

using namespace yamabe;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

// u_0 = (cos t)^+, u_1 = (-cos t)^+ on a zonal grid, cos 2t on a biaxial one: exactly segregated across the
// equator or the Clifford torus.
FieldTuple hemispheres(const MeshMetric& mesh) {
    FieldTuple u(mesh.size(), 2);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        const double c = std::cos(mesh.biaxial_p ? 2 * mesh.t[k] : mesh.t[k]);
        u.values(k, 0) = std::max(c, 0.0);
        u.values(k, 1) = std::max(-c, 0.0);
    }
    return u;
}

FieldTuple swapped(const FieldTuple& u) {
    FieldTuple v(u.nodes(), 2);
    v.component(0) = u.component(1);
    v.component(1) = u.component(0);
    return v;
}

}  // namespace

TEST_CASE("lambda schedule") {
    const auto v = LambdaSchedule{-0.5, 4, 4}.values();
    REQUIRE(v.size() == 4);
    CHECK(v[0] == -0.5);
    CHECK(v[3] == -32.0);
    CHECK_THROWS_WITH(LambdaSchedule({1.0, 4, 3}).values(), ContainsSubstring("couplings must be negative"));
    CHECK_THROWS_AS(LambdaSchedule({-1.0, 1.0, 3}).validate(), DomainError);
    CHECK_THROWS_AS(LambdaSchedule({-1.0, 4, 0}).validate(), DomainError);
    CHECK_THROWS_AS(LambdaSchedule({-1.0, 1e300, 5}).validate(), DomainError);
}

TEST_CASE("segregation integrals") {
    const auto mesh = build_round_sphere(3, 400);
    FieldTuple ones(mesh.size(), 3);
    ones.values.setOnes();
    const auto M = segregation_integral(ones, -1.0, mesh);
    CHECK(M(0, 1) == Approx(-sphere_volume(3)).epsilon(1e-12));
    CHECK(M(2, 1) == M(1, 2));
    CHECK(M.diagonal().cwiseAbs().maxCoeff() == 0.0);
    CHECK(max_off_diagonal(M) == Approx(sphere_volume(3)).epsilon(1e-12));

    const auto h = hemispheres(mesh);
    CHECK(segregation_integral(h, -100.0, mesh).cwiseAbs().maxCoeff() == 0.0);
    CHECK(raw_overlap_measure(h, Eigen::Map<const Eigen::VectorXd>(mesh.weights.data(), mesh.size())) == 0.0);

    // explicit sum with beta = 3 for m = 3
    FieldTuple u(mesh.size(), 2);
    double ref = 0;
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        u.values(k, 0) = 1 + std::cos(mesh.t[k]);
        u.values(k, 1) = 1 + std::sin(mesh.t[k]);
        ref += mesh.weights[k] * std::pow(u.values(k, 0) * u.values(k, 1), 3);
    }
    CHECK(segregation_integral(u, -2.0, mesh)(0, 1) == Approx(-2 * ref).epsilon(1e-13));
    // u_0 drops below tau = 2e-3 in a cap around the south pole
    double cap = 0;
    for (std::size_t k = 0; k < mesh.size(); ++k)
        if (1 + std::cos(mesh.t[k]) <= 2e-3) cap += mesh.weights[k];
    CHECK(cap > 0);
    CHECK(raw_overlap_measure(u, Eigen::Map<const Eigen::VectorXd>(mesh.weights.data(), mesh.size())) ==
          Approx(sphere_volume(3) - cap).epsilon(1e-12));
    CHECK_THROWS_AS(segregation_integral(u, -1.0, Eigen::VectorXd::Ones(3), 3.0), ShapeError);
}

TEST_CASE("Hoelder seminorm") {
    const auto mesh = build_round_sphere(3, 257);
    FieldTuple c(mesh.size(), 1);
    c.values.setConstant(3.0);
    CHECK(holder_estimate(c, 0.9, mesh) == 0.0);
    FieldTuple t(mesh.size(), 1);
    for (std::size_t k = 0; k < mesh.size(); ++k) t.values(k, 0) = mesh.t[k];
    // |t_a - t_b| / d^alpha = d^{1 - alpha}, largest at the full meridian
    const double span = mesh.t.back() - mesh.t.front();
    CHECK(holder_estimate(t, 0.9, mesh) == Approx(std::pow(span, 0.1)).epsilon(1e-12));
    CHECK(holder_estimate(t, 0.5, mesh, 2) == Approx(std::sqrt(span)).epsilon(1e-12));
    CHECK_THROWS_AS(holder_estimate(t, 1.0, mesh), DomainError);
}

TEST_CASE("partition of an exactly segregated pair") {
    const auto mesh = build_round_sphere(3, 401);
    const auto sys = ConformalSystem::from_mesh(mesh);
    const auto u = hemispheres(mesh);
    const auto p = extract_partition(sys, mesh, u, default_tau(u));
    REQUIRE(p.supports.size() == 2);
    CHECK(p.components == std::vector<int>{1, 1});
    CHECK(p.measures[0] + p.measures[1] + p.interface_measure == Approx(mesh.volume()).epsilon(1e-13));
    CHECK(p.measures[0] == Approx(p.measures[1]).epsilon(1e-12));
    CHECK(p.interface_measure < 0.01 * mesh.volume());
    CHECK(p.total == Approx(nehari_energy(sys, u)).epsilon(1e-13));
    CHECK(p.energies[0] + p.energies[1] == Approx(p.total).epsilon(1e-14));
    for (int i = 0; i < 2; ++i) CHECK(p.truncated_energies[i] == Approx(p.energies[i]).epsilon(1e-2));
    for (int k : p.supports[0]) CHECK(mesh.t[k] < 0.5 * std::numbers::pi);
    for (int k : p.supports[1]) CHECK(mesh.t[k] > 0.5 * std::numbers::pi);

    // two supports never share an edge
    for (std::size_t a = 0; a < mesh.size(); ++a)
        for (const auto& nb : mesh.neighbors[a])
            if (p.label[a] >= 0 && p.label[nb.first] >= 0) CHECK(p.label[a] == p.label[nb.first]);

    const auto sp = extract_partition(sys, mesh, swapped(u), default_tau(u));
    CHECK(sp.measures[0] == Approx(p.measures[1]).epsilon(1e-14));
    CHECK(sp.supports[1] == p.supports[0]);

    FieldTuple dead = u;
    dead.component(1).setZero();
    CHECK_THROWS_AS(extract_partition(sys, mesh, dead, default_tau(u)), DegeneratePartitionError);
    CHECK_THROWS_AS(extract_partition(sys, mesh, u, -1.0), DomainError);
}

TEST_CASE("dominance separates overlapping profiles") {
    const auto mesh = build_round_sphere(3, 200);
    const auto sys = ConformalSystem::from_mesh(mesh);
    FieldTuple u(mesh.size(), 2);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        u.values(k, 0) = 1 + std::cos(mesh.t[k]);
        u.values(k, 1) = 1 - std::cos(mesh.t[k]);
    }
    const auto p = extract_partition(sys, mesh, u, default_tau(u));
    double caps = 0;
    for (std::size_t k = 0; k < mesh.size(); ++k)
        if (1 - std::abs(std::cos(mesh.t[k])) <= 2e-3) caps += mesh.weights[k];
    CHECK(p.raw_overlap_measure == Approx(mesh.volume() - caps).epsilon(1e-12));
    CHECK(p.components == std::vector<int>{1, 1});
    for (std::size_t k = 0; k < mesh.size(); ++k)
        if (p.label[k] >= 0) CHECK(u.values(k, p.label[k]) > u.values(k, 1 - p.label[k]));
}

TEST_CASE("consistency and interface on a symmetric pair") {
    const auto mesh = build_biaxial_sphere(3, 301);
    const auto sys = ConformalSystem::from_mesh(mesh);
    const auto u = hemispheres(mesh);
    const auto p = extract_partition(sys, mesh, u, default_tau(u));
    const auto c = partition_consistency(sys, u, p);
    REQUIRE(c.size() == 2);
    const double bubble = std::pow(sobolev_constant(3), 1.5) / 3;
    for (double v : c) {
        REQUIRE(std::isfinite(v));
        CHECK(v > bubble);
    }
    CHECK(c[0] == Approx(c[1]).epsilon(1e-8));

    const auto rep = interface_diagnostics(mesh, u, p);
    REQUIRE_FALSE(rep.nodes.empty());
    CHECK(rep.median_mismatch <= 1e-9);
    for (const auto& n : rep.nodes) {
        CHECK(n.i == 0);
        CHECK(n.j == 1);
    }
}

TEST_CASE("nodal difference is antisymmetric under swapping") {
    const auto mesh = build_round_sphere(3, 300);
    const auto sys = ConformalSystem::from_mesh(mesh);
    FieldTuple u = hemispheres(mesh);
    u.component(1) *= 0.7;
    const auto p = extract_partition(sys, mesh, u, default_tau(u));
    const auto a = nodal_solution(sys, mesh, u, p);
    const auto s = swapped(u);
    const auto b = nodal_solution(sys, mesh, s, extract_partition(sys, mesh, s, default_tau(s)));
    CHECK(a.positive_domains == 1);
    CHECK(a.negative_domains == 1);
    CHECK(a.warning.empty());
    CHECK((a.w + b.w).cwiseAbs().maxCoeff() == 0.0);
    CHECK(b.residual == Approx(a.residual).epsilon(1e-10));
    CHECK(b.energy == Approx(a.energy).epsilon(1e-14));
    FieldTuple three(mesh.size(), 3);
    CHECK_THROWS_AS(nodal_solution(sys, mesh, three, p), ShapeError);

    // a zero residual for the single equation solved on the whole sphere
    Eigen::VectorXd w = Eigen::VectorXd::Constant(mesh.size(), std::pow(kappa(3) * 6, 0.25));
    CHECK(yamabe_residual(sys, w, std::vector<bool>(mesh.size(), true)) <= 1e-12);
}

TEST_CASE("a pole spike on a zonal grid has a mesh-independent quotient") {
    // so minimizers on zonal S^3 grids can collapse onto a pole node; biaxial grids have no such node
    std::vector<double> q;
    for (int n : {101, 401, 1601}) {
        const auto mesh = build_round_sphere(3, n);
        const auto sys = ConformalSystem::from_mesh(mesh);
        Eigen::VectorXd spike = Eigen::VectorXd::Zero(mesh.size());
        spike[0] = 1;
        q.push_back(sys.norm_sq(spike) / std::pow(mesh.weights[0], 1.0 / 3));
    }
    CHECK(q[2] == Approx(q[1]).epsilon(1e-2));
    CHECK(q[2] < sobolev_constant(3));
}

TEST_CASE("m = 10 threshold") {
    CHECK(weyl_balance_coefficient(10) == Approx(5.0 / 567).epsilon(1e-12));
    CHECK(threshold_check_m10(0.5 * 5.0 / 567, 1.0));
    CHECK_FALSE(threshold_check_m10(2 * 5.0 / 567, 1.0));
    CHECK_FALSE(threshold_check_m10(0.0, 1.0));
    CHECK_FALSE(threshold_check_m10(1e-6, 0.0));
    CHECK_THROWS_AS(threshold_check_m10(0.1, -1.0), DomainError);
}

TEST_CASE("assumption check") {
    const double bub = std::pow(sobolev_constant(3), 1.5) / 3;
    auto a = assumption_check(1.9 * bub, {bub}, 3);
    CHECK(a.holds);
    CHECK(a.rhs == Approx(2 * bub));
    CHECK(a.argmin_k == 1);
    a = assumption_check(2.9 * bub, {bub, 1.5 * bub}, 3);
    CHECK(a.rhs == Approx(2.5 * bub));
    CHECK(a.argmin_k == 2);
    CHECK_FALSE(a.holds);
}

TEST_CASE("continuation along a short schedule") {
    const auto mesh = build_biaxial_sphere(3, 256);
    const auto sys = ConformalSystem::from_mesh(mesh);
    FieldTuple u0(mesh.size(), 2);
    for (std::size_t k = 0; k < mesh.size(); ++k) {
        u0.values(k, 0) = std::pow(std::cos(mesh.t[k]), 4) + 1e-3;
        u0.values(k, 1) = std::pow(std::sin(mesh.t[k]), 4) + 1e-3;
    }
    const auto r = continue_lambda(sys, mesh, u0, {-1.0, 4.0, 4});
    INFO(r.failure);
    REQUIRE(r.complete);
    REQUIRE(r.steps.size() == 4);
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
        const auto& s = r.steps[k];
        CHECK(s.converged);
        CHECK(s.energy == Approx(s.nehari_energy).epsilon(1e-8));
        const double raw = s.max_overlap / std::abs(s.lambda);
        if (k > 0) {
            CHECK(s.energy >= r.steps[k - 1].energy * (1 - 1e-9));
            CHECK(raw < r.steps[k - 1].max_overlap / std::abs(r.steps[k - 1].lambda));
        }
    }
    // the exponents of the base spec are kept
    Eigen::MatrixXd L = Eigen::MatrixXd::Constant(2, 2, -1.0), A(2, 2);
    A << 0, 0.5, 5.5, 0;
    CHECK_THROWS_WITH(continue_lambda(sys, mesh, u0, {-1.0, 4.0, 2}, CouplingSpec::general(L, A, 3)),
                      ContainsSubstring("exponents must exceed 1"));
}
