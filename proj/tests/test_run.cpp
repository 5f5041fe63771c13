#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "yamabe/run.hpp"

using namespace yamabe;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

const char* kMinimal =
    "mesh = biaxial:3:256\n"
    "ell = 2\n"
    "alpha = 3   # symmetric exponents\n"
    "lambda0 = -1\n"
    "lambda_ratio = 4\n"
    "lambda_steps = 3\n"
    "output = unused\n";

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("yamabe_run_" + name);
    fs::remove_all(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST_CASE("config defaults and round trip") {
    const auto c = parse_config(kMinimal, false);
    CHECK(c.mesh == "biaxial:3:256");
    CHECK(c.ell == 2);
    CHECK(c.alpha == 3.0);
    CHECK(c.schedule.steps == 3);
    CHECK(c.seed == 1);
    CHECK(c.grad_rel_tol == 1e-7);
    CHECK(c.max_substeps == 48);
    CHECK(c.partition);
    CHECK(parse_config(serialize(c), false) == c);

    std::mt19937 rng(5);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 20; ++trial) {
        RunConfig r = c;
        r.alpha = 1 + 4 * u(rng);
        r.schedule.lambda0 = -std::exp(4 * u(rng) - 2);
        r.schedule.ratio = 1 + 9 * u(rng);
        r.seed = rng();
        r.grad_rel_tol = std::pow(10.0, -12 * u(rng) - 1);
        r.holder_alpha = 0.1 + 0.9 * u(rng);
        r.almgren_rmin = 0.001 + 0.01 * u(rng);
        r.nodal = u(rng) < 0.5;
        r.deterministic = u(rng) < 0.5;
        CHECK(parse_config(serialize(r), false) == r);
    }
}

TEST_CASE("config errors") {
    const std::string base = kMinimal;
    CHECK_THROWS_WITH(parse_config(base + "colour = red\n", false), ContainsSubstring("unknown key 'colour'"));
    CHECK_THROWS_WITH(parse_config(base + "ell = 3\n", false), ContainsSubstring("duplicate key 'ell'"));
    CHECK_THROWS_WITH(parse_config("mesh = zonal:3:64\n", false), ContainsSubstring("missing required key 'ell'"));
    std::string pos = base;
    pos.replace(pos.find("lambda0 = -1"), 12, "lambda0 = 2");
    CHECK_THROWS_WITH(parse_config(pos, false), ContainsSubstring("couplings must be negative"));
    std::string low = base;
    low.replace(low.find("alpha = 3"), 9, "alpha = 1");
    CHECK_THROWS_WITH(parse_config(low, false), ContainsSubstring("exponents must exceed 1"));
    CHECK_THROWS_WITH(parse_config(base + "seed = 1.5\n", false), ContainsSubstring("not an integer"));
    CHECK_THROWS_WITH(parse_config(base + "nodal = maybe\n", false), ContainsSubstring("not a boolean"));
    CHECK_THROWS_WITH(parse_config(base + "tau_rel = 1e-3x\n", false), ContainsSubstring("not a number"));
    CHECK_THROWS_WITH(parse_config(base + "just words\n", false), ContainsSubstring("expected key = value"));
    CHECK_THROWS_AS(parse_config("/nonexistent/run.cfg", true), ConfigError);
}

TEST_CASE("coupling from the config") {
    const auto c = parse_config(std::string(kMinimal) + "", false);
    RunConfig r = c;
    r.ell = 3;
    r.alpha = 2.5;
    const auto s = r.coupling(3);
    CHECK(s.alpha(0, 2) == 2.5);
    CHECK(s.alpha(2, 0) == 3.5);
    CHECK(s.beta(0, 2) == 3.5);
    CHECK(s.lambda(1, 2) == -1.0);
    CHECK_NOTHROW(s.validate(3));
    CHECK(c.coupling(3).symmetric_case(3));
}

TEST_CASE("initial guesses are seeded") {
    const auto mesh = build_biaxial_sphere(3, 200);
    const auto a = initial_guess(mesh, 2, 7), b = initial_guess(mesh, 2, 7), c = initial_guess(mesh, 2, 8);
    CHECK(a.values == b.values);
    CHECK(a.values != c.values);
    CHECK(a.values.minCoeff() >= 0);
    // the perturbation is relative and of size 1e-3
    const Eigen::ArrayXXd ratio = a.values.array() / c.values.array();
    for (Eigen::Index k = 0; k < ratio.size(); ++k)
        if (std::isfinite(ratio(k)) && c.values(k) > 0) CHECK(std::abs(ratio(k) - 1) <= 2.5e-3);
    // cos^4 t and sin^4 t up to the perturbation
    CHECK(a.values(0, 0) == Approx(1.0).epsilon(2e-3));
    CHECK(a.values(0, 1) <= 1e-6);
    const auto oct = build_octahedron_sphere(2);
    const auto g = initial_guess(oct, 3, 1);
    CHECK(g.ell() == 3);
    CHECK(g.values.minCoeff() > 0);
    CHECK((initial_guess(mesh, 1, 3).values.array() - 1).abs().maxCoeff() <= 1e-3);
    CHECK_THROWS_AS(initial_guess(mesh, 0, 1), ShapeError);
}

TEST_CASE("csv round trip") {
    const fs::path d = scratch_dir("csv");
    fs::create_directories(d);
    AlmgrenTrace t;
    for (int k = 1; k <= 3; ++k) {
        t.radii.push_back(0.1 * k);
        t.E.push_back(k);
        t.H.push_back(2.0 * k);
        t.N.push_back(0.5);
        t.H_ellipsoid.push_back(2.0 * k);
    }
    write_almgren_csv((d / "a.csv").string(), t);
    const auto tab = read_csv((d / "a.csv").string());
    CHECK(tab.header == std::vector<std::string>{"r", "E", "H", "N", "H_ellipsoid"});
    CHECK(tab.values("r") == t.radii);
    CHECK(tab.values("N") == t.N);
    CHECK_THROWS_AS(tab.values("nope"), ConfigError);
}

TEST_CASE("end-to-end run is deterministic and reports") {
    auto cfg = parse_config(kMinimal, false);
    const fs::path d1 = scratch_dir("a"), d2 = scratch_dir("b");
    const auto o1 = run(cfg, d1);
    const auto o2 = run(cfg, d2);
    INFO((o1.stages.empty() ? "" : o1.stages.back().detail));
    REQUIRE(o1.ok);
    CHECK(o1.exit_code() == 0);
    std::vector<std::string> names;
    for (const auto& s : o1.stages) names.push_back(s.name);
    CHECK(names == std::vector<std::string>{"mesh", "continuation", "partition", "nodal", "almgren", "blowup"});
    for (const char* f : {"continuation.csv", "summary.txt", "manifest.json", "partition.txt", "almgren_first.csv",
                          "almgren_final.csv", "checkpoints/lambda_02.ypf", "config.cfg"}) {
        INFO(f);
        REQUIRE(fs::exists(d1 / f));
        CHECK(slurp(d1 / f) == slurp(d2 / f));
    }
    CHECK(parse_config((d1 / "config.cfg").string(), true) == cfg);
    const auto last = read_checkpoint((d1 / "checkpoints/lambda_02.ypf").string());
    CHECK(last.ell() == 2);
    CHECK(last.nodes() == 256);

    const auto rep = report(d1);
    CHECK(rep.gaps.empty());
    CHECK_THAT(rep.text, ContainsSubstring("c2* estimate"));
    CHECK_THAT(rep.text, ContainsSubstring("nodal domains: 2"));
    for (const char* f : {"energy_vs_lambda.svg", "segregation_vs_lambda.svg", "almgren_N.svg", "report.txt"}) {
        INFO(f);
        CHECK(fs::exists(d1 / f));
    }
    CHECK_THAT(slurp(d1 / "energy_vs_lambda.svg"), ContainsSubstring("<svg"));
}

TEST_CASE("partial runs and failures") {
    auto cfg = parse_config(kMinimal, false);
    cfg.almgren = false;
    cfg.blowup = false;
    const fs::path d = scratch_dir("partial");
    REQUIRE(run(cfg, d).ok);
    const auto rep = report(d);
    CHECK(rep.gaps.size() == 2);
    CHECK_THAT(rep.text, ContainsSubstring("almgren_first.csv"));
    fs::remove(d / "continuation.csv");
    const auto rep2 = report(d);
    CHECK_THAT(rep2.text, ContainsSubstring("continuation.csv (listed in manifest)"));

    cfg.mesh = "zonal:3:8";
    const fs::path bad = scratch_dir("bad");
    const auto o = run(cfg, bad);
    CHECK_FALSE(o.ok);
    CHECK(o.failed_stage == "mesh");
    CHECK(o.exit_code() == 1);
    CHECK_THAT(slurp(bad / "summary.txt"), ContainsSubstring("failed_stage mesh"));
    CHECK_THAT(slurp(bad / "manifest.json"), ContainsSubstring("\"failed_stage\": \"mesh\""));

    const fs::path empty = scratch_dir("empty");
    fs::create_directories(empty);
    CHECK_THROWS_WITH(report(empty), ContainsSubstring("no manifest"));
}
