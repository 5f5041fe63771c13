#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "yamabe/almgren.hpp"
#include "yamabe/error.hpp"
#include "yamabe/mesh.hpp"
#include "yamabe/nehari.hpp"
#include "yamabe/parallel.hpp"
#include "yamabe/segregation.hpp"

namespace yamabe {

namespace fs = std::filesystem;

// ---- configuration ----

struct RunConfig {
    // required
    std::string mesh;
    int ell = 0;
    double alpha = 0;  // alpha_ij for i < j; beta_ij = 2* - alpha_ij and alpha_ji = beta_ij
    LambdaSchedule schedule;
    std::string output;

    // tolerances and switches
    unsigned long seed = 1;
    double grad_rel_tol = 1e-7;
    double nehari_tol = 1e-10;
    int max_iterations = 20000;
    int max_bisections = 12;
    int max_substeps = 48;
    double holder_alpha = 0.9;
    double tau_rel = 1e-3;
    double almgren_rmin = 0.01;
    double almgren_rmax = 0.5;
    bool partition = true;
    bool nodal = true;
    bool almgren = true;
    bool blowup = true;
    bool deterministic = true;

    bool operator==(const RunConfig&) const = default;

    CouplingSpec coupling(int m) const {
        const double ts = critical_exponent(m);
        Eigen::MatrixXd a = Eigen::MatrixXd::Zero(ell, ell), lam = Eigen::MatrixXd::Constant(ell, ell, schedule.lambda0);
        for (int i = 0; i < ell; ++i)
            for (int j = 0; j < ell; ++j)
                if (i < j) a(i, j) = alpha;
                else if (i > j) a(i, j) = ts - alpha;
        return CouplingSpec::general(lam, a, m);
    }

    ContinuationOptions continuation_options() const {
        ContinuationOptions o;
        o.solver.grad_rel_tol = grad_rel_tol;
        o.solver.nehari_tol = nehari_tol;
        o.solver.max_iterations = max_iterations;
        o.solver.record_trace = false;
        o.holder_alpha = holder_alpha;
        o.max_bisections = max_bisections;
        o.max_substeps = max_substeps;
        return o;
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline double parse_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double d = 0;
    try {
        d = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError("key '" + key + "': '" + v + "' is not a number");
    return d;
}

inline long parse_long(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    long d = 0;
    try {
        d = std::stol(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError("key '" + key + "': '" + v + "' is not an integer");
    return d;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "yes" || v == "1") return true;
    if (v == "false" || v == "no" || v == "0") return false;
    throw ConfigError("key '" + key + "': '" + v + "' is not a boolean");
}

}  // namespace detail

inline void validate(const RunConfig& c) {
    if (c.mesh.empty()) throw ConfigError("mesh must not be empty");
    if (c.output.empty()) throw ConfigError("output must not be empty");
    if (c.ell < 1) throw ConfigError("ell must be >= 1");
    c.schedule.validate();
    if (!(c.grad_rel_tol > 0 && c.grad_rel_tol < 1)) throw ConfigError("grad_rel_tol must lie in (0, 1)");
    if (!(c.nehari_tol > 0)) throw ConfigError("nehari_tol must be positive");
    if (c.max_iterations < 1 || c.max_bisections < 0 || c.max_substeps < 1)
        throw ConfigError("iteration limits must be positive");
    if (!(c.holder_alpha > 0 && c.holder_alpha <= 1)) throw ConfigError("holder_alpha must lie in (0, 1]");
    if (!(c.tau_rel > 0 && c.tau_rel < 1)) throw ConfigError("tau_rel must lie in (0, 1)");
    if (!(c.almgren_rmin > 0 && c.almgren_rmax > c.almgren_rmin)) throw ConfigError("need 0 < almgren_rmin < almgren_rmax");
    if (!(c.alpha > 1)) throw DomainError("exponents must exceed 1");
}

// key = value lines; '#' starts a comment.
inline RunConfig parse_config(std::istream& in) {
    RunConfig c;
    std::map<std::string, std::string> kv;
    std::string line;
    for (int no = 1; std::getline(in, line); ++no) {
        if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("line " + std::to_string(no) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq)), val = detail::trim(line.substr(eq + 1));
        if (key.empty() || val.empty()) throw ConfigError("line " + std::to_string(no) + ": empty key or value");
        if (!kv.emplace(key, val).second) throw ConfigError("line " + std::to_string(no) + ": duplicate key '" + key + "'");
    }
    auto take = [&](const std::string& k) -> std::optional<std::string> {
        auto it = kv.find(k);
        if (it == kv.end()) return std::nullopt;
        std::string v = it->second;
        kv.erase(it);
        return v;
    };
    auto need = [&](const std::string& k) {
        auto v = take(k);
        if (!v) throw ConfigError("missing required key '" + k + "'");
        return *v;
    };
    c.mesh = need("mesh");
    c.ell = static_cast<int>(detail::parse_long("ell", need("ell")));
    c.alpha = detail::parse_double("alpha", need("alpha"));
    c.schedule.lambda0 = detail::parse_double("lambda0", need("lambda0"));
    c.schedule.ratio = detail::parse_double("lambda_ratio", need("lambda_ratio"));
    c.schedule.steps = static_cast<int>(detail::parse_long("lambda_steps", need("lambda_steps")));
    c.output = need("output");
    auto dbl = [&](const char* k, double& dst) {
        if (auto v = take(k)) dst = detail::parse_double(k, *v);
    };
    auto integer = [&](const char* k, int& dst) {
        if (auto v = take(k)) dst = static_cast<int>(detail::parse_long(k, *v));
    };
    auto flag = [&](const char* k, bool& dst) {
        if (auto v = take(k)) dst = detail::parse_bool(k, *v);
    };
    if (auto v = take("seed")) {
        const long s = detail::parse_long("seed", *v);
        if (s < 0) throw ConfigError("seed must be >= 0");
        c.seed = static_cast<unsigned long>(s);
    }
    dbl("grad_rel_tol", c.grad_rel_tol);
    dbl("nehari_tol", c.nehari_tol);
    integer("max_iterations", c.max_iterations);
    integer("max_bisections", c.max_bisections);
    integer("max_substeps", c.max_substeps);
    dbl("holder_alpha", c.holder_alpha);
    dbl("tau_rel", c.tau_rel);
    dbl("almgren_rmin", c.almgren_rmin);
    dbl("almgren_rmax", c.almgren_rmax);
    flag("partition", c.partition);
    flag("nodal", c.nodal);
    flag("almgren", c.almgren);
    flag("blowup", c.blowup);
    flag("deterministic", c.deterministic);
    if (!kv.empty()) throw ConfigError("unknown key '" + kv.begin()->first + "'");
    validate(c);
    return c;
}

inline RunConfig parse_config(const std::string& text_or_path, bool is_path) {
    if (!is_path) {
        std::istringstream in(text_or_path);
        return parse_config(in);
    }
    std::ifstream in(text_or_path);
    if (!in) throw ConfigError("cannot open config " + text_or_path);
    return parse_config(in);
}

inline std::string serialize(const RunConfig& c) {
    using detail::num;
    auto b = [](bool v) { return v ? "true" : "false"; };
    std::ostringstream os;
    os << "mesh = " << c.mesh << '\n'
       << "ell = " << c.ell << '\n'
       << "alpha = " << num(c.alpha) << '\n'
       << "lambda0 = " << num(c.schedule.lambda0) << '\n'
       << "lambda_ratio = " << num(c.schedule.ratio) << '\n'
       << "lambda_steps = " << c.schedule.steps << '\n'
       << "output = " << c.output << '\n'
       << "seed = " << c.seed << '\n'
       << "grad_rel_tol = " << num(c.grad_rel_tol) << '\n'
       << "nehari_tol = " << num(c.nehari_tol) << '\n'
       << "max_iterations = " << c.max_iterations << '\n'
       << "max_bisections = " << c.max_bisections << '\n'
       << "max_substeps = " << c.max_substeps << '\n'
       << "holder_alpha = " << num(c.holder_alpha) << '\n'
       << "tau_rel = " << num(c.tau_rel) << '\n'
       << "almgren_rmin = " << num(c.almgren_rmin) << '\n'
       << "almgren_rmax = " << num(c.almgren_rmax) << '\n'
       << "partition = " << b(c.partition) << '\n'
       << "nodal = " << b(c.nodal) << '\n'
       << "almgren = " << b(c.almgren) << '\n'
       << "blowup = " << b(c.blowup) << '\n'
       << "deterministic = " << b(c.deterministic) << '\n';
    return os.str();
}

// ---- initial data ----

// Latitude grids: components are cos^4 bumps spread along t (ell = 2 gives cos^4 t, sin^4 t on the biaxial grid).
// Simplicial meshes: Gaussian bumps around seeded vertices. The seed also draws a smooth relative perturbation of
// size 1e-3 (low cosine modes in t, or a linear function of the embedding).
inline FieldTuple initial_guess(const MeshMetric& mesh, int ell, unsigned long seed) {
    if (ell < 1) throw ShapeError("initial guess needs ell >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    const std::size_t n = mesh.size();
    FieldTuple u(static_cast<Eigen::Index>(n), ell);
    const bool latitude = mesh.kind == MeshKind::Latitude;
    if (ell == 1) {
        u.values.setOnes();
    } else if (latitude) {
        const double T = mesh.t_end();
        for (std::size_t k = 0; k < n; ++k)
            for (int i = 0; i < ell; ++i) {
                const double d = std::min(1.0, std::abs(mesh.t[k] / T - double(i) / (ell - 1)) * (ell - 1));
                u.values(static_cast<Eigen::Index>(k), i) = std::pow(std::cos(0.5 * std::numbers::pi * d), 4);
            }
    } else {
        std::uniform_int_distribution<std::size_t> pick(0, n - 1);
        std::vector<std::size_t> centers;
        while (static_cast<int>(centers.size()) < ell) {
            const std::size_t c = pick(rng);
            if (std::find(centers.begin(), centers.end(), c) == centers.end()) centers.push_back(c);
        }
        for (std::size_t k = 0; k < n; ++k)
            for (int i = 0; i < ell; ++i) {
                const double d2 = (mesh.vertices[k] - mesh.vertices[centers[i]]).squaredNorm();
                u.values(static_cast<Eigen::Index>(k), i) = std::exp(-d2) + 1e-3;
            }
    }
    const int modes = latitude ? 3 : static_cast<int>(mesh.vertices.front().size());
    for (int i = 0; i < ell; ++i) {
        std::vector<double> a(modes);
        for (double& c : a) c = coef(rng);
        for (std::size_t k = 0; k < n; ++k) {
            double p = 0;
            for (int j = 0; j < modes; ++j)
                p += a[j] * (latitude ? std::cos((j + 1) * std::numbers::pi * mesh.t[k] / mesh.t_end()) : mesh.vertices[k][j]);
            u.values(static_cast<Eigen::Index>(k), i) *= 1.0 + 1e-3 * p / modes;
        }
    }
    return u;
}

// ---- CSV ----

inline void write_continuation_csv(const std::string& path, const ContinuationResult& r) {
    using detail::num;
    std::ofstream out(path);
    out << "step,lambda,converged,substeps,iterations,energy,nehari_energy,max_overlap,frobenius,raw_overlap,holder,"
           "grad_norm,nehari_residual\n";
    for (std::size_t k = 0; k < r.steps.size(); ++k) {
        const auto& s = r.steps[k];
        out << k << ',' << num(s.lambda) << ',' << (s.converged ? 1 : 0) << ',' << s.substeps << ',' << s.iterations
            << ',' << num(s.energy) << ',' << num(s.nehari_energy) << ',' << num(s.max_overlap) << ','
            << num(s.frobenius) << ',' << num(s.raw_overlap_measure) << ',' << num(s.holder) << ','
            << num(s.grad_norm) << ',' << num(s.nehari_residual) << '\n';
    }
}

inline void write_trace_csv(const std::string& path, const std::vector<IterationRecord>& trace) {
    using detail::num;
    std::ofstream out(path);
    out << "iter,psi,grad_norm,nehari_residual";
    const std::size_t ell = trace.empty() ? 0 : trace.front().norms_sq.size();
    for (std::size_t i = 0; i < ell; ++i) out << ",norm_sq_" << i;
    out << '\n';
    for (const auto& r : trace) {
        out << r.iter << ',' << num(r.psi) << ',' << num(r.grad_norm) << ',' << num(r.nehari_residual);
        for (double v : r.norms_sq) out << ',' << num(v);
        out << '\n';
    }
}

inline void write_almgren_csv(const std::string& path, const AlmgrenTrace& t) {
    using detail::num;
    std::ofstream out(path);
    out << "r,E,H,N,H_ellipsoid\n";
    for (std::size_t k = 0; k < t.size(); ++k)
        out << num(t.radii[k]) << ',' << num(t.E[k]) << ',' << num(t.H[k]) << ',' << num(t.N[k]) << ','
            << num(t.H_ellipsoid[k]) << '\n';
}

inline void write_partition_report(const std::string& path, const PartitionResult& p) {
    using detail::num;
    std::ofstream out(path);
    out << "tau " << num(p.tau) << '\n';
    for (std::size_t i = 0; i < p.supports.size(); ++i)
        out << "support " << i << " nodes " << p.supports[i].size() << " components " << p.components[i] << " measure "
            << num(p.measures[i]) << " energy " << num(p.energies[i]) << " truncated_energy "
            << num(p.truncated_energies[i]) << '\n';
    out << "total " << num(p.total) << '\n';
    out << "interface";
    for (int v : p.interface) out << ' ' << v;
    out << '\n';
    out << "interface_measure " << num(p.interface_measure) << '\n';
    out << "labels\n";
    for (std::size_t k = 0; k < p.label.size(); ++k) out << k << ' ' << p.label[k] << '\n';
}

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    int column(const std::string& name) const {
        for (std::size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        return -1;
    }
    std::vector<double> values(const std::string& name) const {
        const int c = column(name);
        if (c < 0) throw ConfigError("missing column '" + name + "'");
        std::vector<double> v;
        for (const auto& r : rows) v.push_back(r[c]);
        return v;
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        for (std::string f; std::getline(ss, f, ',');) out.push_back(f);
        return out;
    };
    if (!std::getline(in, line)) throw std::runtime_error(path + ": empty CSV");
    t.header = split(line);
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const auto f = split(line);
        if (f.size() != t.header.size()) throw std::runtime_error(path + ": ragged row");
        std::vector<double> r;
        for (const auto& s : f) r.push_back(std::stod(s));
        t.rows.push_back(std::move(r));
    }
    return t;
}

// ---- run ----

struct StageRecord {
    std::string name;
    bool ok = false;
    std::string detail;
};

struct RunOutcome {
    fs::path dir;
    bool ok = true;
    std::string failed_stage;
    std::vector<StageRecord> stages;

    int exit_code() const { return ok ? 0 : 1; }
};

namespace detail {

inline std::string mask_name(unsigned mask, int ell) {
    std::string s = "{";
    for (int i = 0; i < ell; ++i)
        if (mask & (1u << i)) s += (s.size() > 1 ? "," : "") + std::to_string(i + 1);
    return s + "}";
}

}  // namespace detail

// Stages run in order; the first failing stage stops the run and is recorded in the manifest and summary.
inline RunOutcome run(const RunConfig& cfg, const fs::path& dir_override = {}) {
    validate(cfg);
    using detail::num;
    RunOutcome out;
    out.dir = dir_override.empty() ? fs::path(cfg.output) : dir_override;
    fs::create_directories(out.dir / "checkpoints");
    Execution& ex = default_execution();
    ex.deterministic = ex.deterministic || cfg.deterministic;

    std::vector<std::string> files;
    auto emit = [&](const std::string& name) { files.push_back(name); };
    {
        std::ofstream snap(out.dir / "config.cfg");
        snap << serialize(cfg);
        emit("config.cfg");
    }
    std::vector<std::pair<std::string, std::string>> summary;
    auto put = [&](const std::string& k, const std::string& v) { summary.emplace_back(k, v); };

    MeshMetric mesh;
    std::optional<ConformalSystem> sys;
    ContinuationResult cont;
    std::optional<PartitionResult> part;
    CouplingSpec spec;

    auto stage = [&](const std::string& name, const std::function<std::string()>& body) {
        if (!out.ok) return;
        StageRecord rec;
        rec.name = name;
        try {
            rec.detail = body();
            rec.ok = true;
        } catch (const std::exception& e) {
            rec.detail = e.what();
            rec.ok = false;
        }
        if (!rec.ok) {
            out.ok = false;
            out.failed_stage = name;
        }
        out.stages.push_back(rec);
    };

    stage("mesh", [&] {
        mesh = make_mesh(cfg.mesh);
        sys = ConformalSystem::from_mesh(mesh);
        spec = cfg.coupling(mesh.m);
        spec.validate(mesh.m);
        const auto co = coercivity_check(mesh);
        put("mesh", mesh.describe());
        put("coercivity_min_eigenvalue", num(co.min_eigenvalue));
        if (!co.coercive) throw NumericalError("conformal Laplacian is not coercive on this mesh");
        return mesh.describe();
    });

    stage("continuation", [&] {
        const FieldTuple u0 = initial_guess(mesh, cfg.ell, cfg.seed);
        cont = continue_lambda(*sys, mesh, u0, cfg.schedule, spec, cfg.continuation_options());
        write_continuation_csv((out.dir / "continuation.csv").string(), cont);
        emit("continuation.csv");
        for (std::size_t k = 0; k < cont.steps.size(); ++k) {
            if (!cont.steps[k].converged) continue;
            char name[64];
            std::snprintf(name, sizeof name, "checkpoints/lambda_%02zu.ypf", k);
            write_checkpoint((out.dir / name).string(), cont.steps[k].u);
            emit(name);
        }
        if (!cont.complete) throw NumericalError(cont.failure);
        const auto& first = cont.steps.front();
        const auto& last = cont.steps.back();
        double hmin = first.holder, hmax = first.holder;
        for (const auto& s : cont.steps) {
            hmin = std::min(hmin, s.holder);
            hmax = std::max(hmax, s.holder);
        }
        put("lambda_final", num(last.lambda));
        put("energy_final", num(last.energy));
        put("c" + std::to_string(cfg.ell) + "_star_estimate", num(last.nehari_energy));
        if (cfg.ell > 1) {
            put("max_overlap_initial", num(first.max_overlap));
            put("max_overlap_final", num(last.max_overlap));
            put("segregation_ratio", num(first.max_overlap > 0 ? last.max_overlap / first.max_overlap : 0.0));
        }
        put("holder_ratio", num(hmin > 0 ? hmax / hmin : 0.0));
        return std::to_string(cont.steps.size()) + " lambda steps converged";
    });

    if (cfg.partition && cfg.ell > 1)
        stage("partition", [&] {
            const FieldTuple& u = cont.steps.back().u;
            part = extract_partition(*sys, mesh, u, cfg.tau_rel * u.values.cwiseAbs().maxCoeff());
            write_partition_report((out.dir / "partition.txt").string(), *part);
            emit("partition.txt");
            std::string comps, energies;
            for (std::size_t i = 0; i < part->supports.size(); ++i) {
                comps += (i ? " " : "") + std::to_string(part->components[i]);
                energies += (i ? " " : "") + num(part->energies[i]);
            }
            put("partition_supports", std::to_string(part->supports.size()));
            put("partition_components", comps);
            put("partition_connected", part->all_connected() ? "yes" : "no");
            put("partition_energies", energies);
            put("partition_total", num(part->total));
            put("interface_nodes", std::to_string(part->interface.size()));
            const auto ir = interface_diagnostics(mesh, u, *part);
            put("interface_median_mismatch", num(ir.median_mismatch));
            put("singular_nodes", std::to_string(ir.singular_count));
            return std::to_string(part->supports.size()) + " supports";
        });

    if (cfg.nodal && cfg.ell == 2 && part)
        stage("nodal", [&] {
            const auto nr = nodal_solution(*sys, mesh, cont.steps.back().u, *part);
            put("nodal_domains", std::to_string(nr.positive_domains + nr.negative_domains));
            put("nodal_positive_domains", std::to_string(nr.positive_domains));
            put("nodal_negative_domains", std::to_string(nr.negative_domains));
            put("nodal_energy", num(nr.energy));
            put("nodal_residual", num(nr.residual));
            if (!nr.warning.empty()) put("nodal_warning", nr.warning);
            return std::to_string(nr.positive_domains + nr.negative_domains) + " nodal domains";
        });

    if (cfg.almgren && cfg.ell > 1 && mesh.kind == MeshKind::Latitude && mesh.biaxial_p > 0)
        stage("almgren", [&] {
            const auto radii = geometric_radii(cfg.almgren_rmin, cfg.almgren_rmax);
            std::string detail;
            for (const auto& [tag, idx] : {std::pair<std::string, std::size_t>{"first", 0},
                                           std::pair<std::string, std::size_t>{"final", cont.steps.size() - 1}}) {
                const FieldTuple& u = cont.steps[idx].u;
                const double psi0 = profile_crossing(mesh, u);
                const auto pc = latitude_chart(mesh, u, psi0);
                const auto tr = almgren_trace(pc.u, pc.field, pc.f, pc.x0, radii);
                write_almgren_csv((out.dir / ("almgren_" + tag + ".csv")).string(), tr);
                emit("almgren_" + tag + ".csv");
                const auto mr = monotonicity_check(tr);
                put("almgren_" + tag + "_center", num(psi0));
                put("almgren_" + tag + "_C_fit", num(mr.C_fit));
                put("almgren_" + tag + "_doubling_sup", num(mr.doubling_sup));
                put("almgren_" + tag + "_C_star", num(mr.C_star));
                put("almgren_" + tag + "_within_cap", mr.within_cap && mr.doubling_ok ? "yes" : "no");
                if (tr.truncated) put("almgren_" + tag + "_flag", tr.flag);
                detail += tag + " C*=" + detail::fmt_g(mr.C_star) + " ";
            }
            return detail;
        });

    if (cfg.blowup && cfg.ell > 1)
        stage("blowup", [&] {
            MinimizeOptions o = cfg.continuation_options().solver;
            const auto& last = cont.steps.back();
            const auto br = blowup_risk(*sys, last.u, spec.with_lambda(last.lambda), o);
            put("blowup_risk", br.risk ? "yes" : "no");
            put("blowup_min_margin", num(br.min_margin));
            put("blowup_vanishing_set", detail::mask_name(br.failing_mask, cfg.ell));
            put("blowup_complete", br.complete ? "yes" : "no");
            return std::string(br.risk ? "risk" : "clear");
        });

    {
        std::ofstream s(out.dir / "summary.txt");
        s << "status " << (out.ok ? "ok" : "failed") << '\n';
        if (!out.ok) s << "failed_stage " << out.failed_stage << '\n' << "diagnostic " << out.stages.back().detail << '\n';
        s << "seed " << cfg.seed << '\n';
        for (const auto& [k, v] : summary) s << k << ' ' << v << '\n';
        emit("summary.txt");
    }
    nlohmann::ordered_json mf;
    mf["format"] = "yamabe-run 1";
    mf["config"] = "config.cfg";
    mf["seed"] = cfg.seed;
    mf["ok"] = out.ok;
    if (!out.ok) mf["failed_stage"] = out.failed_stage;
    mf["stages"] = nlohmann::ordered_json::array();
    for (const auto& st : out.stages)
        mf["stages"].push_back({{"name", st.name}, {"ok", st.ok}, {"detail", st.detail}});
    mf["files"] = files;
    std::ofstream(out.dir / "manifest.json") << mf.dump(2) << '\n';
    return out;
}

// ---- report ----

struct Series {
    std::string label;
    std::vector<double> x, y;
};

// Static line plot; log axes take log10 of the data.
inline std::string svg_plot(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                            const std::vector<Series>& series, bool logx, bool logy) {
    const double W = 640, H = 420, L = 80, R = 20, T = 40, B = 60;
    auto tx = [&](double v) { return logx ? std::log10(std::abs(v)) : v; };
    auto ty = [&](double v) { return logy ? std::log10(std::max(std::abs(v), 1e-300)) : v; };
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t k = 0; k < s.x.size(); ++k) {
            x0 = std::min(x0, tx(s.x[k]));
            x1 = std::max(x1, tx(s.x[k]));
            y0 = std::min(y0, ty(s.y[k]));
            y1 = std::max(y1, ty(s.y[k]));
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto px = [&](double v) { return L + (tx(v) - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double v) { return H - B - (ty(v) - y0) / (y1 - y0) * (H - T - B); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n"
       << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
       << "\" stroke=\"black\"/>\n"
       << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double fx = x0 + (x1 - x0) * k / 4, fy = y0 + (y1 - y0) * k / 4;
        const double sx = L + (W - L - R) * k / 4, sy = H - B - (H - T - B) * k / 4;
        os << "<text x=\"" << sx << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
           << (logx ? "1e" : "") << detail::fmt_g(fx) << "</text>\n"
           << "<text x=\"" << L - 6 << "\" y=\"" << sy + 4 << "\" text-anchor=\"end\" font-size=\"11\">"
           << (logy ? "1e" : "") << detail::fmt_g(fy) << "</text>\n";
    }
    os << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\" font-size=\"13\">"
       << xlabel << "</text>\n"
       << "<text x=\"18\" y=\"" << (T + H - B) / 2 << "\" text-anchor=\"middle\" font-size=\"13\" transform=\"rotate(-90 18 "
       << (T + H - B) / 2 << ")\">" << ylabel << "</text>\n";
    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& s = series[i];
        os << "<polyline fill=\"none\" stroke=\"" << colors[i % 4] << "\" stroke-width=\"1.6\" points=\"";
        for (std::size_t k = 0; k < s.x.size(); ++k) os << (k ? " " : "") << px(s.x[k]) << ',' << py(s.y[k]);
        os << "\"/>\n";
        os << "<text x=\"" << W - R - 4 << "\" y=\"" << T + 16 * (i + 1) << "\" text-anchor=\"end\" font-size=\"12\" fill=\""
           << colors[i % 4] << "\">" << s.label << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

struct ReportResult {
    std::vector<std::string> written;
    std::vector<std::string> gaps;
    std::string text;
};

inline ReportResult report(const fs::path& dir) {
    const fs::path mpath = dir / "manifest.json";
    if (!fs::exists(mpath)) throw ConfigError("no manifest in " + dir.string());
    nlohmann::json mf;
    {
        std::ifstream in(mpath);
        try {
            mf = nlohmann::json::parse(in);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError("unreadable manifest: " + std::string(e.what()));
        }
    }
    ReportResult rr;
    std::ostringstream txt;
    auto missing = [&](const std::string& f, const std::string& what) {
        rr.gaps.push_back(f + " (" + what + ")");
    };

    std::vector<std::pair<std::string, std::string>> summary;
    if (std::ifstream s(dir / "summary.txt"); s) {
        std::string line;
        while (std::getline(s, line)) {
            const auto sp = line.find(' ');
            summary.emplace_back(line.substr(0, sp), sp == std::string::npos ? "" : line.substr(sp + 1));
        }
    } else {
        missing("summary.txt", "no summary");
    }
    auto get = [&](const std::string& k) -> std::optional<std::string> {
        for (const auto& [kk, v] : summary)
            if (kk == k) return v;
        return std::nullopt;
    };

    txt << "run directory: " << dir.string() << '\n';
    txt << "status: " << (mf.value("ok", false) ? "ok" : "failed");
    if (mf.contains("failed_stage")) txt << " (stage " << mf["failed_stage"].get<std::string>() << ")";
    txt << '\n';
    if (mf.contains("stages"))
        for (const auto& st : mf["stages"])
            txt << "  " << st.value("name", "?") << ": " << (st.value("ok", false) ? "ok" : "FAILED") << "  "
                << st.value("detail", "") << '\n';
    if (auto m = get("mesh")) txt << "mesh: " << *m << '\n';
    for (const auto& [k, v] : summary)
        if (k.size() > 14 && k.compare(k.size() - 14, 14, "_star_estimate") == 0)
            txt << k.substr(0, k.size() - 14) << "* estimate: " << v << '\n';
    if (auto v = get("partition_supports"))
        txt << "partition: " << *v << " supports, components per support " << get("partition_components").value_or("?")
            << ", energies " << get("partition_energies").value_or("?") << '\n';
    if (auto v = get("nodal_domains")) txt << "nodal domains: " << *v << " (residual " << get("nodal_residual").value_or("?") << ")\n";
    if (auto v = get("segregation_ratio")) txt << "segregation ratio (final / initial): " << *v << '\n';
    if (auto v = get("holder_ratio")) txt << "Hoelder seminorm max/min ratio: " << *v << '\n';
    if (auto v = get("almgren_final_C_star")) txt << "Almgren C* (final profile): " << *v << '\n';
    if (auto v = get("blowup_risk")) {
        if (*v == "yes")
            txt << "BLOW-UP FLAG: compactness margin " << get("blowup_min_margin").value_or("?") << " <= 0 for vanishing set "
                << get("blowup_vanishing_set").value_or("?") << '\n';
        else
            txt << "blow-up margin: " << get("blowup_min_margin").value_or("?") << " (clear)\n";
    }

    auto write = [&](const std::string& name, const std::string& body) {
        std::ofstream(dir / name) << body;
        rr.written.push_back(name);
    };
    if (fs::exists(dir / "continuation.csv")) {
        const auto t = read_csv((dir / "continuation.csv").string());
        const auto lam = t.values("lambda");
        write("energy_vs_lambda.svg", svg_plot("Energy along the continuation", "|lambda|", "J",
                                               {{"J", lam, t.values("energy")}}, true, false));
        write("segregation_vs_lambda.svg",
              svg_plot("Segregation matrix norm", "|lambda|", "Frobenius norm", {{"||M||_F", lam, t.values("frobenius")}},
                       true, true));
    } else {
        missing("continuation.csv", "energy and segregation plots skipped");
    }
    std::vector<Series> traces;
    for (const char* tag : {"first", "final"}) {
        const std::string f = std::string("almgren_") + tag + ".csv";
        if (fs::exists(dir / f)) {
            const auto t = read_csv((dir / f).string());
            traces.push_back({tag, t.values("r"), t.values("N")});
        } else {
            missing(f, "no N(r) trace");
        }
    }
    if (!traces.empty()) write("almgren_N.svg", svg_plot("Frequency N(r)", "r", "N", traces, true, false));
    if (mf.contains("files"))
        for (const auto& f : mf["files"])
            if (!fs::exists(dir / f.get<std::string>())) missing(f.get<std::string>(), "listed in manifest");

    if (!rr.gaps.empty()) {
        txt << "gaps:\n";
        for (const auto& g : rr.gaps) txt << "  " << g << '\n';
    }
    rr.text = txt.str();
    write("report.txt", rr.text);
    return rr;
}

}  // namespace yamabe
