#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "yamabe/almgren.hpp"
#include "yamabe/constants.hpp"
#include "yamabe/decay.hpp"
#include "yamabe/fit.hpp"
#include "yamabe/mesh.hpp"
#include "yamabe/nehari.hpp"
#include "yamabe/parallel.hpp"
#include "yamabe/run.hpp"
#include "yamabe/segregation.hpp"

using namespace yamabe;

namespace {

std::vector<double> split_numbers(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    for (std::string f; std::getline(ss, f, ',');) out.push_back(detail::parse_double("list", detail::trim(f)));
    return out;
}

// Full ell x ell row-major matrix, or a single value taken as alpha_ij for every i < j.
Eigen::MatrixXd alpha_matrix(const std::string& s, int ell, int m) {
    const auto v = split_numbers(s);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(ell, ell);
    if (v.size() == 1) {
        for (int i = 0; i < ell; ++i)
            for (int j = 0; j < ell; ++j)
                if (i < j) a(i, j) = v[0];
                else if (i > j) a(i, j) = critical_exponent(m) - v[0];
    } else if (v.size() == static_cast<std::size_t>(ell * ell)) {
        for (int i = 0; i < ell; ++i)
            for (int j = 0; j < ell; ++j) a(i, j) = v[i * ell + j];
    } else {
        throw ConfigError("alpha matrix needs 1 or ell*ell entries");
    }
    return a;
}

void print_table_row(int m) {
    const auto t = constants(m);
    std::printf("%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,", t.m, t.two_star, t.kappa, t.omega_m,
                t.omega_m_minus_1, t.sigma_m, t.a_frak, t.b_frak);
    if (t.c_bar) std::printf("%.17g", *t.c_bar);
    std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Yamabe-type systems: constants, Nehari solver, segregation, frequency and decay diagnostics"};
    app.require_subcommand(1);
    bool deterministic = false;
    app.add_flag("--deterministic", deterministic, "fixed-order reductions regardless of YAMABE_THREADS");

    auto* c_const = app.add_subcommand("constants", "dimensional constants as CSV");
    std::vector<int> dims;
    c_const->add_option("--dim", dims, "dimensions (repeatable)")->required();

    auto* c_bubble = app.add_subcommand("bubble-verify", "truncated-bubble moments and their delta-scaling fit");
    int bdim = 3;
    double moment_alpha = 2.0;
    std::string deltas_s = "1e-4,3e-4,1e-3,3e-3,1e-2";
    c_bubble->add_option("--dim", bdim, "dimension")->required();
    c_bubble->add_option("--alpha", moment_alpha, "moment exponent");
    c_bubble->add_option("--deltas", deltas_s, "comma-separated concentration parameters");

    auto* c_solve = app.add_subcommand("solve", "least-energy solution at a fixed coupling");
    std::string mesh_spec, alpha_s, out_prefix = "solution", checkpoint;
    int ell = 0;
    double lambda = -1, tol = 1e-7;
    unsigned long seed = 1;
    c_solve->add_option("--mesh", mesh_spec, "zonal:m:n, biaxial:m:n[:p], cross:m[:level], octa:level or a YPMESH file")
        ->required();
    c_solve->add_option("--ell", ell, "number of components")->required();
    c_solve->add_option("--lambda", lambda, "off-diagonal coupling (< 0)");
    c_solve->add_option("--alpha-matrix", alpha_s, "alpha_ij (one value or ell*ell row-major)")->required();
    c_solve->add_option("--tol", tol, "relative gradient tolerance");
    c_solve->add_option("--seed", seed, "initial-data seed");
    c_solve->add_option("--from-checkpoint", checkpoint, "initial field");
    c_solve->add_option("--out", out_prefix, "output prefix (.ypf checkpoint, _trace.csv)");

    auto* c_cont = app.add_subcommand("continuation", "warm-started coupling continuation");
    std::string schedule_s, out_dir = "continuation";
    c_cont->add_option("--mesh", mesh_spec)->required();
    c_cont->add_option("--from-checkpoint", checkpoint, "starting field")->required();
    c_cont->add_option("--schedule", schedule_s, "lambda0,ratio,steps")->required();
    c_cont->add_option("--alpha-matrix", alpha_s, "alpha_ij (default 2*/2)");
    c_cont->add_option("--out", out_dir, "output directory");

    auto* c_part = app.add_subcommand("partition", "supports, interface and energies of a segregated field");
    double tau_rel = 1e-3;
    std::string part_out = "partition.txt";
    c_part->add_option("--mesh", mesh_spec)->required();
    c_part->add_option("--checkpoint", checkpoint)->required();
    c_part->add_option("--tau", tau_rel, "threshold relative to max |u|");
    c_part->add_option("--out", part_out);

    auto* c_alm = app.add_subcommand("almgren", "frequency function on the latitude chart of a profile");
    std::string radii_s = "0.01,0.5";
    double center = -1;
    std::string alm_out = "almgren.csv";
    c_alm->add_option("--mesh", mesh_spec)->required();
    c_alm->add_option("--checkpoint", checkpoint)->required();
    c_alm->add_option("--center", center, "chart center in t (default: where u_1 = u_2)");
    c_alm->add_option("--radii", radii_s, "rmin,rmax[,per_decade]");
    c_alm->add_option("--out", alm_out);

    auto* c_decay = app.add_subcommand("decay", "exponential decay of sup u on balls");
    int dim = 2;
    std::string csweep_s = "1,4,16,64";
    double R = 1.0, h = 0.025;
    std::string decay_out = "decay.csv";
    c_decay->add_option("--dim", dim, "dimension (1..3)");
    c_decay->add_option("--C-sweep", csweep_s, "comma-separated values of C");
    c_decay->add_option("--R", R, "ball radius");
    c_decay->add_option("--spacing", h, "grid spacing");
    c_decay->add_option("--out", decay_out);

    auto* c_report = app.add_subcommand("report", "plots and text summary of a run directory");
    std::string run_dir;
    c_report->add_option("dir", run_dir)->required();

    auto* c_run = app.add_subcommand("run", "staged pipeline from a config file");
    std::string cfg_path, override_dir;
    c_run->add_option("config", cfg_path)->required();
    c_run->add_option("--output", override_dir, "override the configured output directory");

    CLI11_PARSE(app, argc, argv);
    Execution& ex = default_execution();
    ex.deterministic = deterministic || ex.threads <= 1;

    try {
        if (*c_const) {
            std::printf("m,two_star,kappa,omega_m,omega_m_minus_1,sigma_m,a_frak,b_frak,c_bar\n");
            for (int m : dims) print_table_row(m);
        } else if (*c_bubble) {
            const auto deltas = split_numbers(deltas_s);
            const auto ms = moment_scaling(bdim, moment_alpha, deltas);
            std::vector<double> ld, lv;
            for (std::size_t k = 0; k < ms.deltas.size(); ++k) {
                ld.push_back(std::log(ms.deltas[k]));
                lv.push_back(std::log(ms.values[k]));
            }
            const auto lf = linear_fit(ld, lv);
            std::printf("delta,I_alpha,fit\n");
            for (std::size_t k = 0; k < ms.deltas.size(); ++k)
                std::printf("%.17g,%.17g,%.17g\n", ms.deltas[k], ms.values[k],
                            std::exp(lf.intercept + lf.slope * ld[k]));
            std::printf("# regime %s, expected exponent %.6g, fitted %.6g%s\n", regime_name(ms.regime),
                        ms.expected_exponent, ms.fitted_exponent, ms.log_factor_detected ? ", log factor" : "");
        } else if (*c_solve) {
            const auto mesh = make_mesh(mesh_spec);
            const auto sys = ConformalSystem::from_mesh(mesh);
            Eigen::MatrixXd lam = Eigen::MatrixXd::Constant(ell, ell, lambda);
            const auto spec = CouplingSpec::general(lam, alpha_matrix(alpha_s, ell, mesh.m), mesh.m);
            spec.validate(mesh.m);
            const FieldTuple u0 = checkpoint.empty() ? initial_guess(mesh, ell, seed) : read_checkpoint(checkpoint);
            MinimizeOptions opt;
            opt.grad_rel_tol = tol;
            const auto r = minimize(sys, u0, spec, opt);
            write_checkpoint(out_prefix + ".ypf", r.u);
            write_trace_csv(out_prefix + "_trace.csv", r.trace);
            std::printf("%s after %d iterations, J = %.12g, |grad| = %.3e, Nehari residual = %.3e\n",
                        r.converged ? "converged" : "NOT converged", r.iterations, r.energy, r.grad_norm,
                        r.nehari_residual);
            if (!r.converged) std::fprintf(stderr, "solve: %s\n", r.diagnostic.c_str());
            return r.converged ? 0 : 2;
        } else if (*c_cont) {
            const auto mesh = make_mesh(mesh_spec);
            const auto sys = ConformalSystem::from_mesh(mesh);
            const auto sv = split_numbers(schedule_s);
            if (sv.size() != 3) throw ConfigError("schedule needs lambda0,ratio,steps");
            LambdaSchedule sch{sv[0], sv[1], static_cast<int>(sv[2])};
            const FieldTuple u0 = read_checkpoint(checkpoint);
            CouplingSpec base = CouplingSpec::symmetric(u0.ell(), mesh.m, sch.lambda0);
            if (!alpha_s.empty())
                base = CouplingSpec::general(base.lambda, alpha_matrix(alpha_s, u0.ell(), mesh.m), mesh.m);
            const auto r = continue_lambda(sys, mesh, u0, sch, base);
            fs::create_directories(out_dir);
            write_continuation_csv(out_dir + "/continuation.csv", r);
            for (std::size_t k = 0; k < r.steps.size(); ++k)
                if (r.steps[k].converged) {
                    char name[64];
                    std::snprintf(name, sizeof name, "/lambda_%02zu.ypf", k);
                    write_checkpoint(out_dir + name, r.steps[k].u);
                }
            for (const auto& s : r.steps)
                std::printf("lambda=%-12g J=%.10g overlap=%.4e holder=%.4g\n", s.lambda, s.energy, s.max_overlap,
                            s.holder);
            if (!r.complete) std::fprintf(stderr, "continuation: %s\n", r.failure.c_str());
            return r.complete ? 0 : 2;
        } else if (*c_part) {
            const auto mesh = make_mesh(mesh_spec);
            const auto sys = ConformalSystem::from_mesh(mesh);
            const FieldTuple u = read_checkpoint(checkpoint);
            const auto p = extract_partition(sys, mesh, u, tau_rel * u.values.cwiseAbs().maxCoeff());
            write_partition_report(part_out, p);
            for (std::size_t i = 0; i < p.supports.size(); ++i)
                std::printf("support %zu: %zu nodes, %d component(s), c = %.10g\n", i, p.supports[i].size(),
                            p.components[i], p.energies[i]);
            std::printf("interface: %zu nodes, measure %.4g\n", p.interface.size(), p.interface_measure);
        } else if (*c_alm) {
            const auto mesh = make_mesh(mesh_spec);
            const FieldTuple u = read_checkpoint(checkpoint);
            const auto rv = split_numbers(radii_s);
            if (rv.size() < 2 || rv.size() > 3) throw ConfigError("radii need rmin,rmax[,per_decade]");
            const double psi0 = center > 0 ? center : profile_crossing(mesh, u);
            const auto pc = latitude_chart(mesh, u, psi0);
            const auto radii = geometric_radii(rv[0], rv[1], rv.size() == 3 ? static_cast<int>(rv[2]) : 24);
            const auto tr = almgren_trace(pc.u, pc.field, pc.f, pc.x0, radii);
            write_almgren_csv(alm_out, tr);
            const auto mr = monotonicity_check(tr);
            std::printf("center t=%.6f  C_fit=%.4g  doubling sup=%.4g  C*=%.4g  %s\n", psi0, mr.C_fit, mr.doubling_sup,
                        mr.C_star, mr.within_cap && mr.doubling_ok ? "within cap" : "cap exceeded");
            if (tr.truncated) std::printf("trace truncated: %s\n", tr.flag.c_str());
        } else if (*c_decay) {
            const auto field = CoefficientField::identity(dim, 4.0 * R);
            const auto rep = decay_verify(dim, split_numbers(csweep_s), R, field, h);
            std::ofstream out(decay_out);
            out << "C,sup_R,sup_2R,oracle\n";
            for (const auto& p : rep.points)
                out << detail::num(p.C) << ',' << detail::num(p.sup_R) << ',' << detail::num(p.sup_2R) << ','
                    << detail::num(p.oracle) << '\n';
            std::printf("c1=%.6g  c2=%.6g  oracle c2=%.6g  rel err=%.3e  linearity=%.3e\n", rep.c1, rep.c2,
                        rep.oracle_c2, rep.c2_relative_error, rep.linearity);
        } else if (*c_report) {
            const auto r = report(run_dir);
            std::cout << r.text;
            return r.gaps.empty() ? 0 : 3;
        } else if (*c_run) {
            const auto cfg = parse_config(cfg_path, true);
            const auto o = run(cfg, override_dir);
            for (const auto& s : o.stages) std::printf("%-13s %s  %s\n", s.name.c_str(), s.ok ? "ok" : "FAILED", s.detail.c_str());
            std::printf("run directory: %s\n", o.dir.string().c_str());
            if (!o.ok) std::fprintf(stderr, "run failed at stage %s\n", o.failed_stage.c_str());
            return o.exit_code();
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
