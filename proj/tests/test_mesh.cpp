#include <catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>

#include "yamabe/mesh.hpp"

using namespace yamabe;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("yamabe_test_" + name)).string();
}

double omega_gamma(int m) { return 2 * std::pow(std::numbers::pi, (m + 1) / 2.0) / std::tgamma((m + 1) / 2.0); }

double quad(const SpMat& A, const Eigen::VectorXd& u) { return u.dot(A * u); }

}  // namespace

TEST_CASE("latitude weights integrate the sphere") {
    CHECK(build_round_sphere(3, 4096).volume() == Approx(2 * std::numbers::pi * std::numbers::pi).epsilon(1e-5));
    CHECK(build_round_sphere(10, 4096).volume() == Approx(omega_gamma(10)).epsilon(1e-5));
    for (int m : {2, 3, 4, 6})
        for (int p = 1; p <= m; ++p) CHECK(build_biaxial_sphere(m, 257, p).volume() == Approx(omega_gamma(m)).epsilon(1e-12));
    CHECK(build_round_sphere(5, 200).volume() == Approx(omega_gamma(5)).epsilon(1e-12));
}

TEST_CASE("pole weights scale like the cap volume") {
    for (int m : {3, 6}) {
        const auto mesh = build_round_sphere(m, 1025);
        const double h = mesh.t[1] - mesh.t[0];
        const double cap = omega_gamma(m - 1) * std::pow(h / 2, m) / m;
        CHECK(mesh.weights.front() == Approx(cap).epsilon(1e-2));
        CHECK(mesh.weights.back() == Approx(cap).epsilon(1e-2));
    }
    CHECK_THROWS_AS(build_round_sphere(3, 15), ResolutionError);
}

TEST_CASE("constant field") {
    for (const auto& mesh : {build_round_sphere(3, 300), build_biaxial_sphere(3, 300), build_octahedron_sphere(3),
                             build_cross_polytope_sphere(3, 1)}) {
        const auto f = assemble_forms(mesh);
        const Eigen::VectorXd one = Eigen::VectorXd::Ones(mesh.size());
        const int m = mesh.m;
        CHECK(std::abs(quad(f.stiffness, one)) <= 1e-10 * f.stiffness.diagonal().sum());
        CHECK(quad(f.curvature_mass, one) == Approx(conformal_factor(m) * m * (m - 1) * mesh.volume()).epsilon(1e-12));
    }
    const auto mesh = build_round_sphere(3, 4096);
    CHECK(quad(assemble_forms(mesh).curvature_mass, Eigen::VectorXd::Ones(mesh.size())) ==
          Approx(kappa(3) * 6 * 2 * std::numbers::pi * std::numbers::pi).epsilon(1e-5));
}

TEST_CASE("forms are symmetric and lumped") {
    for (const auto& mesh : {build_octahedron_sphere(3), build_cross_polytope_sphere(3, 1), build_round_sphere(4, 64)}) {
        const auto f = assemble_forms(mesh);
        const SpMat kt = f.stiffness.transpose(), ct = f.curvature_mass.transpose();
        CHECK((f.stiffness - kt).norm() == 0.0);
        CHECK((f.curvature_mass - ct).norm() == 0.0);
        const Eigen::VectorXd rows = f.l2_mass * Eigen::VectorXd::Ones(mesh.size());
        CHECK((rows - f.weights).norm() == 0.0);
        CHECK(f.weights.sum() == Approx(mesh.volume()).epsilon(1e-14));
        const Eigen::VectorXd krows = f.stiffness * Eigen::VectorXd::Ones(mesh.size());
        CHECK(krows.cwiseAbs().maxCoeff() <= 1e-10 * f.stiffness.diagonal().cwiseAbs().maxCoeff());
    }
}

TEST_CASE("first sphere eigenvalue") {
    for (int m : {2, 3, 5}) {
        const auto mesh = build_round_sphere(m, 400);
        const auto f = assemble_forms(mesh);
        CHECK(generalized_eigenvalue(f.stiffness, f.weights, 0) == Approx(0.0).margin(1e-8));
        CHECK(generalized_eigenvalue(f.stiffness, f.weights, 1) == Approx(m).epsilon(1e-3));
    }
    const auto oct = build_octahedron_sphere(4);
    const auto f = assemble_forms(oct);
    for (int k = 1; k <= 3; ++k) CHECK(generalized_eigenvalue(f.stiffness, f.weights, k) == Approx(2.0).epsilon(2e-2));
}

TEST_CASE("Rayleigh quotient of cos(theta) converges at second order") {
    const int m = 3;
    std::vector<double> err;
    for (int n : {33, 65, 129, 257}) {
        const auto mesh = build_round_sphere(m, n);
        const auto f = assemble_forms(mesh);
        Eigen::VectorXd u(mesh.size());
        for (std::size_t k = 0; k < mesh.size(); ++k) u[k] = std::cos(mesh.t[k]);
        err.push_back(std::abs(quad(f.stiffness, u) / quad(f.l2_mass, u) - m));
    }
    for (std::size_t k = 1; k < err.size(); ++k) {
        INFO("errors " << err[k - 1] << " -> " << err[k]);
        CHECK(std::log2(err[k - 1] / err[k]) >= 1.9);
    }
}

TEST_CASE("coercivity") {
    auto mesh = build_round_sphere(3, 200);
    auto r = coercivity_check(mesh);
    CHECK(r.coercive);
    CHECK(r.min_eigenvalue == Approx(kappa(3) * 6).epsilon(1e-9));
    mesh.curvature.assign(mesh.size(), -100.0);
    r = coercivity_check(mesh);
    CHECK_FALSE(r.coercive);
    CHECK(r.min_eigenvalue < 0);
    mesh.curvature.assign(mesh.size(), 0.0);
    r = coercivity_check(mesh);
    CHECK_FALSE(r.coercive);
    CHECK(std::abs(r.min_eigenvalue) <= 1e-8);
    CHECK(coercivity_check(build_cross_polytope_sphere(3, 1)).coercive);
    // kappa vanishes in two dimensions
    CHECK_FALSE(coercivity_check(build_octahedron_sphere(2)).coercive);
}

TEST_CASE("simplicial spheres") {
    const auto oct = build_octahedron_sphere(4);
    CHECK(euler_characteristic(oct) == 2);
    CHECK(oct.volume() == Approx(4 * std::numbers::pi).epsilon(1e-2));
    CHECK(euler_characteristic(build_cross_polytope_sphere(3, 1)) == 0);
    CHECK(euler_characteristic(build_cross_polytope_sphere(2, 0)) == 2);
    CHECK_THROWS_AS(euler_characteristic(build_round_sphere(3, 20)), DomainError);
}

TEST_CASE("mesh files") {
    const auto oct = build_octahedron_sphere(2);
    const std::string p = temp_path("oct.ypmesh");
    save_mesh(p, oct);
    const auto back = load_mesh(p);
    REQUIRE(back.size() == oct.size());
    CHECK(back.volume() == Approx(oct.volume()).epsilon(1e-14));
    CHECK(euler_characteristic(back) == 2);

    auto write = [&](const std::string& name, const std::string& body) {
        const std::string q = temp_path(name);
        std::ofstream(q) << body;
        return q;
    };
    const std::string open = write("open.ypmesh", "YPMESH 1\n4 2 1\n0 0 0 1\n1 0 0 1\n0 1 0 1\n1 1 0 1\n0 1 2\n1 3 2\n");
    CHECK_THROWS_WITH(load_mesh(open), ContainsSubstring("mesh not closed"));
    const std::string nocurv = write("nocurv.ypmesh", "YPMESH 1\n4 4 1\n0 0 0\n1 0 0\n0 1 0\n0 0 1\n0 1 2\n0 1 3\n0 2 3\n1 2 3\n");
    CHECK_THROWS_WITH(load_mesh(nocurv), ContainsSubstring("curvature field required"));
    const std::string tet = write("tet.ypmesh", "YPMESH 1\n4 4 1\n0 0 0 1\n1 0 0 1\n0 1 0 1\n0 0 1 1\n0 1 2\n0 1 3\n0 2 3\n1 2 3\n");
    CHECK(load_mesh(tet).size() == 4);
    const std::string flat = write("flat.ypmesh", "YPMESH 1\n4 4 1\n0 0 0 1\n1 0 0 1\n2 0 0 1\n3 0 0 1\n0 1 2\n0 1 3\n0 2 3\n1 2 3\n");
    CHECK_THROWS_WITH(load_mesh(flat), ContainsSubstring("degenerate cell"));
    const std::string badmetric =
        write("badmetric.ypmesh",
              "YPMESH 1\n4 4 1\n0 0 0 1 0 0 -1 0 1 1\n1 0 0 1 0 0 1 0 1 1\n0 1 0 1 0 0 1 0 1 1\n0 0 1 1 0 0 1 0 1 1\n"
              "0 1 2\n0 1 3\n0 2 3\n1 2 3\n");
    CHECK_THROWS_WITH(load_mesh(badmetric), ContainsSubstring("symmetric positive definite"));
    CHECK_THROWS_WITH(load_mesh(write("magic.ypmesh", "MESH 2\n4 4 1\n")), ContainsSubstring("YPMESH 1"));
    CHECK_THROWS_AS(load_mesh(temp_path("does_not_exist")), MeshError);
}

TEST_CASE("checkpoints round-trip") {
    std::mt19937 rng(3);
    std::normal_distribution<double> g;
    FieldTuple u(37, 3);
    for (Eigen::Index k = 0; k < u.nodes(); ++k)
        for (int i = 0; i < 3; ++i) u.values(k, i) = g(rng);
    const std::string p = temp_path("field.ypf");
    write_checkpoint(p, u);
    CHECK(std::filesystem::file_size(p) == 6 + 8 + 37 * 3 * 8);
    const auto back = read_checkpoint(p);
    CHECK(back.values == u.values);
    std::ifstream in(p, std::ios::binary);
    char head[6];
    in.read(head, 6);
    CHECK(std::string(head, 6) == "YPFLD1");
    std::uint32_t ell = 0, n = 0;
    in.read(reinterpret_cast<char*>(&ell), 4);
    in.read(reinterpret_cast<char*>(&n), 4);
    CHECK(ell == 3);
    CHECK(n == 37);
    double first = 0, second = 0;
    in.read(reinterpret_cast<char*>(&first), 8);
    in.read(reinterpret_cast<char*>(&second), 8);
    CHECK(first == u.values(0, 0));
    CHECK(second == u.values(0, 1));  // node-major
    const std::string bad = temp_path("bad.ypf");
    std::ofstream(bad) << "NOTAFIELD";
    CHECK_THROWS_WITH(read_checkpoint(bad), ContainsSubstring("not a YPFLD1"));
}

TEST_CASE("mesh specs") {
    CHECK(make_mesh("zonal:3:64").size() == 64);
    CHECK(make_mesh("biaxial:3:64").biaxial_p == 2);
    CHECK(make_mesh("biaxial:4:64:1").biaxial_p == 1);
    CHECK(make_mesh("octa:1").kind == MeshKind::Simplicial);
    CHECK(make_mesh("cross:3").m == 3);
    CHECK_THROWS_AS(make_mesh("zonal:x:64"), ConfigError);
}
