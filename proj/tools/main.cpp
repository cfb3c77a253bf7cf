#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "qcollapse/action.hpp"
#include "qcollapse/config.hpp"
#include "qcollapse/io.hpp"
#include "qcollapse/kernel.hpp"
#include "qcollapse/varcalc2t.hpp"

namespace fs = std::filesystem;
using namespace qcollapse;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitNotConverged = 2;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    int threads = 1;
};

RunConfig load_config_with_overrides(const GlobalOpts& opts) {
    RunConfig cfg = load_run_config(opts.config_path);
    if (const char* env = std::getenv("QCOLLAPSE_OUT")) {
        cfg.output.directory = env;
    }
    if (!opts.out_dir.empty()) cfg.output.directory = opts.out_dir;
    if (opts.seed && cfg.ensemble) cfg.ensemble->seed = *opts.seed;
    return cfg;
}

json base_manifest(const RunConfig& cfg, const char* command) {
    json m;
    m["version"] = version_string();
    m["command"] = command;
    m["seed"] = cfg.ensemble ? json(cfg.ensemble->seed) : json(nullptr);
    m["config"] = run_config_to_json(cfg);
    return m;
}

// Everything the manifest records about one finished solve.
json solve_summary(const RunConfig& cfg, const SolveResult& res) {
    json s;
    s["converged"] = res.converged;
    s["iterations"] = res.iterations;
    s["final_residual_norm"] = res.final_residual_norm;
    s["nbc_residual_norm"] = res.nbc_residual;
    s["cdot_tf_norm"] = res.cdot_tf_norm;
    if (!res.diagnostics.empty()) s["diagnostics"] = res.diagnostics;

    const CoefficientTrajectory& traj = res.trajectory;
    const Eigen::MatrixXcd resid = cfg.solve.variant == SolveVariant::Constrained
                                       ? ide_residual_constrained(traj, cfg.spec, cfg.couplings)
                                       : ide_residual_unconstrained(traj, cfg.spec, cfg.couplings);
    double euler_max = 0.0;
    for (int q = 2; q < traj.n_nodes() - 1; ++q) {
        euler_max = std::max(euler_max, resid.row(q).cwiseAbs().maxCoeff());
    }
    s["euler_residual_max"] = euler_max;
    s["euler_residual_node1"] = resid.row(1).cwiseAbs().maxCoeff();
    s["final_total_weight"] = total_weight(traj, traj.n_nodes() - 1);

    const ActionBreakdown ab = action_breakdown(traj, cfg.spec, cfg.couplings);
    s["action"] = {{"s12", ab.s12}, {"sI", ab.sI}, {"rI", ab.rI}, {"total", ab.total}};

    try {
        const CollapseMetrics cm = collapse_metrics(traj, cfg.spec, cfg.collapse);
        s["collapse"] = {{"agreement_residual", cm.agreement_residual},
                         {"purity", cm.purity},
                         {"dominant_j", cm.dominant_j},
                         {"collapsed", cm.collapsed}};
    } catch (const DegenerateStateError& e) {
        s["collapse"] = nullptr;
        s["collapse_note"] = e.what();
    }

    const double eps = slow_variation_epsilon(cfg.couplings.kernel, cfg.spec,
                                              cfg.couplings.hbar, traj.grid);
    s["slow_variation_epsilon"] = eps < 0.0 ? json(nullptr) : json(eps);

    if (cfg.solve.variant == SolveVariant::Constrained && res.lambda_trace.size() > 0) {
        s["lambda_min"] = res.lambda_trace.minCoeff();
        s["lambda_max"] = res.lambda_trace.maxCoeff();
    }

    const auto degenerate = validate_nondegenerate(cfg.spec, 1e-9);
    if (!degenerate.empty()) {
        s["degenerate_energy_pairs"] = degenerate.size();
    }
    return s;
}

int cmd_solve(const GlobalOpts& opts) {
    RunConfig cfg = load_config_with_overrides(opts);
    fs::create_directories(cfg.output.directory);
    const auto t0 = std::chrono::steady_clock::now();
    SolveResult res = solve_bvp(cfg.initial_c, cfg.spec, cfg.couplings, cfg.grid, cfg.solve);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const auto degenerate = validate_nondegenerate(cfg.spec, 1e-9);
    if (!degenerate.empty()) {
        std::cerr << "warning: " << degenerate.size()
                  << " degenerate combined-energy pair(s); outcome statistics assume a "
                     "non-degenerate spectrum\n";
    }

    json manifest = base_manifest(cfg, "solve");
    manifest["results"] = solve_summary(cfg, res);
    manifest["runtime_seconds"] = elapsed;
    if (cfg.output.write_json) {
        write_text_file(cfg.output.directory + "/manifest.json", manifest.dump(2) + "\n");
        write_text_file(cfg.output.directory + "/trajectory.json",
                        trajectory_to_json(res.trajectory, cfg.spec).dump(2) + "\n");
    }
    if (cfg.output.write_csv) {
        write_trajectory_csv(cfg.output.directory + "/trajectory.csv", res.trajectory, cfg.spec);
        if (cfg.solve.variant == SolveVariant::Constrained && res.lambda_trace.size() > 0) {
            std::string lam = "t,lambda\n";
            for (int q = 0; q < res.trajectory.n_nodes(); ++q) {
                lam += format_double(res.trajectory.grid.t(q)) + "," +
                       format_double(res.lambda_trace[q]) + "\n";
            }
            write_text_file(cfg.output.directory + "/lambda.csv", lam);
        }
    }
    std::cout << (res.converged ? "converged" : "NOT converged") << " after " << res.iterations
              << " iterations, residual " << res.final_residual_norm << "\n"
              << "outputs in " << cfg.output.directory << "\n";
    if (!res.converged) {
        std::cerr << "diagnostics: " << res.diagnostics << "\n";
        return kExitNotConverged;
    }
    return kExitOk;
}

int cmd_ensemble(const GlobalOpts& opts) {
    RunConfig cfg = load_config_with_overrides(opts);
    if (!cfg.ensemble) {
        std::cerr << "error: config has no ensemble section\n";
        return kExitConfig;
    }
    fs::create_directories(cfg.output.directory);

    EnsembleInstance inst;
    inst.spec = cfg.spec;
    inst.couplings = cfg.couplings;
    inst.t_i = cfg.grid.t_i;
    inst.n_nodes = cfg.grid.n_nodes;
    inst.initial_c = cfg.initial_c;
    inst.solve = cfg.solve;
    inst.collapse = cfg.collapse;

    const auto t0 = std::chrono::steady_clock::now();
    EnsembleReport report = run_ensemble(inst, cfg.ensemble->distribution, cfg.ensemble->n,
                                         cfg.ensemble->seed, opts.threads);
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    // report.json is the deterministic artifact: identical (seed, config)
    // must reproduce it byte for byte, so no timings in here.
    write_text_file(cfg.output.directory + "/report.json",
                    ensemble_report_to_json(report).dump(2) + "\n");
    write_frequencies_csv(cfg.output.directory + "/frequencies.csv", report, cfg.spec);

    json manifest = base_manifest(cfg, "ensemble");
    manifest["runtime_seconds"] = elapsed;
    manifest["threads"] = opts.threads;
    manifest["n_collapsed"] = report.n_collapsed;
    manifest["n_diverged"] = report.n_diverged;
    write_text_file(cfg.output.directory + "/manifest.json", manifest.dump(2) + "\n");

    if (cfg.output.retain_trajectories) {
        // Re-run the realizations that converged to store their trajectories;
        // cheaper bookkeeping than holding every trajectory during the run.
        for (int r = 0; r < report.n_realizations; ++r) {
            const auto& row = report.per_realization[r];
            if (!row.converged) continue;
            const RealizationInputs in =
                realization_inputs(inst, cfg.ensemble->distribution, cfg.ensemble->seed, r);
            TimeGrid grid{inst.t_i, inst.t_i + in.T, inst.n_nodes};
            SolveResult res = solve_bvp(in.initial_c, inst.spec, inst.couplings, grid,
                                        inst.solve);
            char name[64];
            std::snprintf(name, sizeof(name), "/realization_%04d.csv", r);
            write_trajectory_csv(cfg.output.directory + name, res.trajectory, cfg.spec);
        }
    }

    const double frac =
        static_cast<double>(report.n_realizations - report.n_diverged) / report.n_realizations;
    std::cout << "ensemble: " << report.n_realizations << " realizations, " << report.n_collapsed
              << " collapsed, " << report.n_diverged << " diverged ("
              << elapsed << " s)\noutputs in " << cfg.output.directory << "\n";
    return frac >= cfg.ensemble->min_converged_fraction ? kExitOk : kExitNotConverged;
}

int cmd_action(const GlobalOpts& opts, const std::string& trajectory_path) {
    RunConfig cfg = load_config_with_overrides(opts);
    CoefficientTrajectory traj = read_trajectory_csv(trajectory_path, cfg.spec, cfg.grid);
    const ActionBreakdown ab = action_breakdown(traj, cfg.spec, cfg.couplings);
    std::cout << "s12   = " << format_double(ab.s12) << "\n"
              << "sI    = " << format_double(ab.sI) << "\n"
              << "rI    = " << format_double(ab.rI) << "\n"
              << "total = " << format_double(ab.total) << "\n";

    const ActionGradient grad = action_gradient_fd(traj, cfg.spec, cfg.couplings);
    const Eigen::MatrixXcd g = grad.wirtinger();
    double interior_norm = 0.0;
    for (int q = 2; q < traj.n_nodes() - 1; ++q) {
        interior_norm = std::max(interior_norm, g.row(q).cwiseAbs().maxCoeff());
    }
    // Node 1 is the preparation row in a solve, not a stationarity row; its
    // gradient carries the boundary-data slack and is reported separately.
    std::cout << "stationarity |dS/dC*|_inf over nodes 2..N-2 = "
              << format_double(interior_norm) << "\n"
              << "gradient at node 1 (preparation row) = "
              << format_double(g.row(1).cwiseAbs().maxCoeff()) << "\n";
    return kExitOk;
}

int cmd_verify_appendix(bool list_only, bool inject_sign_error) {
    if (list_only) {
        for (const auto& name : appendix_battery_names()) std::cout << name << "\n";
        return kExitOk;
    }
    const auto checks = run_appendix_battery(inject_sign_error);
    bool all_ok = true;
    for (const auto& c : checks) {
        const char* status = c.skipped ? "SKIP" : (c.passed ? "PASS" : "FAIL");
        std::cout << status << "  " << c.name << "  (" << c.detail << ")\n";
        all_ok = all_ok && c.passed;
    }
    return all_ok ? kExitOk : kExitNotConverged;
}

int cmd_sweep(const GlobalOpts& opts) {
    RunConfig cfg = load_config_with_overrides(opts);
    if (!cfg.sweep) {
        std::cerr << "error: config has no sweep section\n";
        return kExitConfig;
    }
    fs::create_directories(cfg.output.directory);

    auto axis = [](const std::vector<double>& v, double base) {
        return v.empty() ? std::vector<double>{base} : v;
    };
    const auto mus = axis(cfg.sweep->mu, cfg.couplings.mu);
    const auto nus = axis(cfg.sweep->nu, cfg.couplings.nu);
    const auto taus = axis(cfg.sweep->tau, cfg.couplings.kernel.tau);
    const auto Ts = axis(cfg.sweep->T, cfg.grid.duration());

    std::string csv = "mu,nu,tau,T,converged,iterations,residual,purity,agreement_residual,"
                      "dominant_j,final_weight\n";
    bool all_converged = true;
    for (double mu : mus) {
        for (double nu : nus) {
            for (double tau : taus) {
                for (double T : Ts) {
                    Couplings coup = cfg.couplings;
                    coup.mu = mu;
                    coup.nu = nu;
                    coup.kernel.tau = tau;
                    TimeGrid grid{cfg.grid.t_i, cfg.grid.t_i + T, cfg.grid.n_nodes};
                    SolveResult res;
                    res = solve_bvp(cfg.initial_c, cfg.spec, coup, grid, cfg.solve);
                    all_converged = all_converged && res.converged;
                    double purity = 0.0, agreement = 0.0;
                    int dom = 0;
                    try {
                        const CollapseMetrics cm =
                            collapse_metrics(res.trajectory, cfg.spec, cfg.collapse);
                        purity = cm.purity;
                        agreement = cm.agreement_residual;
                        dom = cm.dominant_j;
                    } catch (const DegenerateStateError&) {
                    }
                    csv += format_double(mu) + "," + format_double(nu) + "," +
                           format_double(tau) + "," + format_double(T) + "," +
                           (res.converged ? "1" : "0") + "," + std::to_string(res.iterations) +
                           "," + format_double(res.final_residual_norm) + "," +
                           format_double(purity) + "," + format_double(agreement) + "," +
                           std::to_string(dom) + "," +
                           format_double(total_weight(res.trajectory,
                                                      res.trajectory.n_nodes() - 1)) +
                           "\n";
                }
            }
        }
    }
    write_text_file(cfg.output.directory + "/sweep.csv", csv);
    json manifest = base_manifest(cfg, "sweep");
    manifest["all_converged"] = all_converged;
    write_text_file(cfg.output.directory + "/manifest.json", manifest.dump(2) + "\n");
    std::cout << "sweep written to " << cfg.output.directory << "/sweep.csv\n";
    return all_converged ? kExitOk : kExitNotConverged;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"nonlocal measurement-collapse simulator"};
    app.require_subcommand(1);

    GlobalOpts opts;
    app.add_option("--config", opts.config_path, "path to the JSON run configuration");
    app.add_option("--out", opts.out_dir, "output directory (overrides config)");
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "ensemble seed (overrides config)");
    app.add_option("--threads", opts.threads, "ensemble worker threads (default 1)");

    auto* solve = app.add_subcommand("solve", "solve one boundary value problem");
    auto* ensemble = app.add_subcommand("ensemble", "run a hidden-variable ensemble");
    auto* action = app.add_subcommand("action", "evaluate the action of a stored trajectory");
    std::string trajectory_path;
    action->add_option("--trajectory", trajectory_path, "trajectory CSV to evaluate")
        ->required();
    auto* verify = app.add_subcommand("verify-appendix", "run the two-time calculus battery");
    bool list_only = false, inject = false;
    verify->add_flag("--list", list_only, "print check names and exit");
    verify->add_flag("--inject-sign-error", inject,
                     "negative control: flip a sign inside one check");
    auto* sweep = app.add_subcommand("sweep", "solve over a grid of mu, nu, tau, T");

    CLI11_PARSE(app, argc, argv);
    if (seed_opt->count() > 0) opts.seed = seed_value;

    try {
        if (verify->parsed()) return cmd_verify_appendix(list_only, inject);
        if (opts.config_path.empty()) {
            std::cerr << "error: --config is required\n";
            return kExitConfig;
        }
        if (solve->parsed()) return cmd_solve(opts);
        if (ensemble->parsed()) return cmd_ensemble(opts);
        if (action->parsed()) return cmd_action(opts, trajectory_path);
        if (sweep->parsed()) return cmd_sweep(opts);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const ArgumentError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const DegenerateKernelError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const EnsembleError& e) {
        std::cerr << "ensemble error: " << e.what() << "\n";
        return kExitNotConverged;
    } catch (const NumericalBlowupError& e) {
        std::cerr << "numerical blowup: " << e.what() << "\n";
        return kExitNotConverged;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitConfig;
    }
    return kExitConfig;
}
