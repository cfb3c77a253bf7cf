#include "qcollapse/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace qcollapse {

namespace {

void require_keys(const json& j, const std::string& path,
                  const std::set<std::string>& allowed) {
    if (!j.is_object()) {
        throw ConfigError("config section '" + path + "' must be an object");
    }
    for (const auto& item : j.items()) {
        if (!allowed.count(item.key())) {
            throw ConfigError("unknown key '" + path + "." + item.key() + "' in config");
        }
    }
}

const json& require(const json& j, const std::string& path, const std::string& key) {
    if (!j.contains(key)) {
        throw ConfigError("missing key '" + path + "." + key + "' in config");
    }
    return j.at(key);
}

double get_number(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_number()) throw ConfigError("'" + path + "." + key + "' must be a number");
    return v.get<double>();
}

double get_number_or(const json& j, const std::string& path, const std::string& key,
                     double fallback) {
    if (!j.contains(key)) return fallback;
    return get_number(j, path, key);
}

int get_int(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_number_integer()) throw ConfigError("'" + path + "." + key + "' must be an integer");
    return v.get<int>();
}

std::string get_string(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_string()) throw ConfigError("'" + path + "." + key + "' must be a string");
    return v.get<std::string>();
}

bool get_bool_or(const json& j, const std::string& path, const std::string& key, bool fallback) {
    if (!j.contains(key)) return fallback;
    const json& v = j.at(key);
    if (!v.is_boolean()) throw ConfigError("'" + path + "." + key + "' must be a boolean");
    return v.get<bool>();
}

std::vector<double> get_array(const json& j, const std::string& path, const std::string& key) {
    const json& v = require(j, path, key);
    if (!v.is_array()) throw ConfigError("'" + path + "." + key + "' must be an array");
    std::vector<double> out;
    for (const auto& x : v) {
        if (!x.is_number()) throw ConfigError("'" + path + "." + key + "' must hold numbers");
        out.push_back(x.get<double>());
    }
    return out;
}

json to_json_array(const std::vector<double>& v) {
    json a = json::array();
    for (double x : v) a.push_back(x);
    return a;
}

} // namespace

void RunConfig::validate() const {
    spec.validate();
    couplings.validate();
    grid.validate();
    solve.validate();
    if (initial_c.size() != spec.num_modes()) {
        throw ConfigError("initial_state length must equal J*K = " +
                          std::to_string(spec.num_modes()));
    }
    const double w = initial_c.squaredNorm();
    if (std::abs(w - 1.0) > 1e-10) {
        throw ConfigError("initial_state must be normalized: sum |C|^2 = " + std::to_string(w));
    }
    if (collapse.purity < 0.0 || collapse.purity > 1.0 || collapse.agreement < 0.0 ||
        collapse.agreement > 1.0) {
        throw ConfigError("collapse thresholds must lie in [0, 1]");
    }
    if (ensemble) {
        ensemble->distribution.validate();
        if (ensemble->n < 1) throw ConfigError("ensemble.n must be >= 1");
        if (ensemble->min_converged_fraction < 0.0 || ensemble->min_converged_fraction > 1.0) {
            throw ConfigError("ensemble.min_converged_fraction must lie in [0, 1]");
        }
    }
}

RunConfig parse_run_config(const json& j) {
    require_keys(j, "", {"model", "kernel", "grid", "initial_state", "solve", "collapse",
                         "ensemble", "sweep", "output"});
    RunConfig cfg;

    const json& model = require(j, "", "model");
    require_keys(model, "model", {"sigma1", "sigma2", "e1", "e2", "B", "mu", "nu", "hbar"});
    cfg.spec.sigma1 = get_array(model, "model", "sigma1");
    cfg.spec.sigma2 = get_array(model, "model", "sigma2");
    cfg.spec.e1 = get_array(model, "model", "e1");
    cfg.spec.e2 = get_array(model, "model", "e2");
    cfg.couplings.B = get_number_or(model, "model", "B", 1.0);
    cfg.couplings.mu = get_number_or(model, "model", "mu", -1.0);
    cfg.couplings.nu = get_number_or(model, "model", "nu", -1.0);
    cfg.couplings.hbar = get_number_or(model, "model", "hbar", 1.0);

    const json& kernel = require(j, "", "kernel");
    require_keys(kernel, "kernel", {"family", "tau"});
    cfg.couplings.kernel.family = kernel_family_from_name(get_string(kernel, "kernel", "family"));
    cfg.couplings.kernel.tau = get_number_or(kernel, "kernel", "tau", 0.0);

    const json& grid = require(j, "", "grid");
    require_keys(grid, "grid", {"t_i", "t_f", "n_nodes"});
    cfg.grid.t_i = get_number(grid, "grid", "t_i");
    cfg.grid.t_f = get_number(grid, "grid", "t_f");
    cfg.grid.n_nodes = get_int(grid, "grid", "n_nodes");

    const json& init = require(j, "", "initial_state");
    require_keys(init, "initial_state", {"re", "im"});
    const auto re = get_array(init, "initial_state", "re");
    const auto im = get_array(init, "initial_state", "im");
    if (re.size() != im.size()) {
        throw ConfigError("initial_state.re and initial_state.im must have equal lengths");
    }
    cfg.initial_c.resize(static_cast<int>(re.size()));
    for (size_t i = 0; i < re.size(); ++i) {
        cfg.initial_c[static_cast<int>(i)] = std::complex<double>(re[i], im[i]);
    }

    if (j.contains("solve")) {
        const json& solve = j.at("solve");
        require_keys(solve, "solve",
                     {"variant", "strategy", "max_iters", "residual_tol",
                      "continuation_steps_nu", "initial_guess", "dense_unknown_limit"});
        if (solve.contains("variant")) {
            cfg.solve.variant = solve_variant_from_name(get_string(solve, "solve", "variant"));
        }
        if (solve.contains("strategy")) {
            cfg.solve.strategy = solve_strategy_from_name(get_string(solve, "solve", "strategy"));
        }
        if (solve.contains("max_iters")) cfg.solve.max_iters = get_int(solve, "solve", "max_iters");
        if (solve.contains("residual_tol")) {
            cfg.solve.residual_tol = get_number(solve, "solve", "residual_tol");
        }
        if (solve.contains("continuation_steps_nu")) {
            cfg.solve.continuation_steps_nu = get_int(solve, "solve", "continuation_steps_nu");
        }
        if (solve.contains("initial_guess")) {
            cfg.solve.initial_guess =
                initial_guess_from_name(get_string(solve, "solve", "initial_guess"));
        }
        if (solve.contains("dense_unknown_limit")) {
            cfg.solve.dense_unknown_limit = get_int(solve, "solve", "dense_unknown_limit");
        }
    }

    if (j.contains("collapse")) {
        const json& col = j.at("collapse");
        require_keys(col, "collapse", {"purity_threshold", "agreement_threshold"});
        cfg.collapse.purity = get_number_or(col, "collapse", "purity_threshold", 0.99);
        cfg.collapse.agreement = get_number_or(col, "collapse", "agreement_threshold", 0.01);
    }

    if (j.contains("ensemble") && !j.at("ensemble").is_null()) {
        const json& ens = j.at("ensemble");
        require_keys(ens, "ensemble",
                     {"T_center", "T_halfwidth", "law", "initial_phase_jitter", "n", "seed",
                      "min_converged_fraction"});
        EnsembleConfig e;
        e.distribution.T_center = get_number(ens, "ensemble", "T_center");
        e.distribution.T_halfwidth = get_number(ens, "ensemble", "T_halfwidth");
        if (ens.contains("law")) e.distribution.law = get_string(ens, "ensemble", "law");
        e.distribution.initial_phase_jitter =
            get_number_or(ens, "ensemble", "initial_phase_jitter", 0.0);
        e.n = get_int(ens, "ensemble", "n");
        if (ens.contains("seed")) {
            e.seed = require(ens, "ensemble", "seed").get<std::uint64_t>();
        }
        e.min_converged_fraction =
            get_number_or(ens, "ensemble", "min_converged_fraction", 0.9);
        cfg.ensemble = e;
    }

    if (j.contains("sweep") && !j.at("sweep").is_null()) {
        const json& sw = j.at("sweep");
        require_keys(sw, "sweep", {"mu", "nu", "tau", "T"});
        SweepConfig s;
        if (sw.contains("mu")) s.mu = get_array(sw, "sweep", "mu");
        if (sw.contains("nu")) s.nu = get_array(sw, "sweep", "nu");
        if (sw.contains("tau")) s.tau = get_array(sw, "sweep", "tau");
        if (sw.contains("T")) s.T = get_array(sw, "sweep", "T");
        cfg.sweep = s;
    }

    if (j.contains("output")) {
        const json& out = j.at("output");
        require_keys(out, "output",
                     {"directory", "retain_trajectories", "write_csv", "write_json"});
        if (out.contains("directory")) {
            cfg.output.directory = get_string(out, "output", "directory");
        }
        cfg.output.retain_trajectories =
            get_bool_or(out, "output", "retain_trajectories", false);
        cfg.output.write_csv = get_bool_or(out, "output", "write_csv", true);
        cfg.output.write_json = get_bool_or(out, "output", "write_json", true);
    }

    cfg.validate();
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        j = json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config parse error in '" + path + "': " + e.what());
    }
    return parse_run_config(j);
}

json run_config_to_json(const RunConfig& config) {
    json j;
    j["model"] = {{"sigma1", to_json_array(config.spec.sigma1)},
                  {"sigma2", to_json_array(config.spec.sigma2)},
                  {"e1", to_json_array(config.spec.e1)},
                  {"e2", to_json_array(config.spec.e2)},
                  {"B", config.couplings.B},
                  {"mu", config.couplings.mu},
                  {"nu", config.couplings.nu},
                  {"hbar", config.couplings.hbar}};
    j["kernel"] = {{"family", kernel_family_name(config.couplings.kernel.family)},
                   {"tau", config.couplings.kernel.tau}};
    j["grid"] = {{"t_i", config.grid.t_i},
                 {"t_f", config.grid.t_f},
                 {"n_nodes", config.grid.n_nodes}};
    std::vector<double> re(config.initial_c.size()), im(config.initial_c.size());
    for (int i = 0; i < config.initial_c.size(); ++i) {
        re[i] = config.initial_c[i].real();
        im[i] = config.initial_c[i].imag();
    }
    j["initial_state"] = {{"re", to_json_array(re)}, {"im", to_json_array(im)}};
    j["solve"] = {{"variant", solve_variant_name(config.solve.variant)},
                  {"strategy", solve_strategy_name(config.solve.strategy)},
                  {"max_iters", config.solve.max_iters},
                  {"residual_tol", config.solve.residual_tol},
                  {"continuation_steps_nu", config.solve.continuation_steps_nu},
                  {"initial_guess", initial_guess_name(config.solve.initial_guess)},
                  {"dense_unknown_limit", config.solve.dense_unknown_limit}};
    j["collapse"] = {{"purity_threshold", config.collapse.purity},
                     {"agreement_threshold", config.collapse.agreement}};
    if (config.ensemble) {
        j["ensemble"] = {{"T_center", config.ensemble->distribution.T_center},
                         {"T_halfwidth", config.ensemble->distribution.T_halfwidth},
                         {"law", config.ensemble->distribution.law},
                         {"initial_phase_jitter", config.ensemble->distribution.initial_phase_jitter},
                         {"n", config.ensemble->n},
                         {"seed", config.ensemble->seed},
                         {"min_converged_fraction", config.ensemble->min_converged_fraction}};
    }
    if (config.sweep) {
        j["sweep"] = {{"mu", to_json_array(config.sweep->mu)},
                      {"nu", to_json_array(config.sweep->nu)},
                      {"tau", to_json_array(config.sweep->tau)},
                      {"T", to_json_array(config.sweep->T)}};
    }
    j["output"] = {{"directory", config.output.directory},
                   {"retain_trajectories", config.output.retain_trajectories},
                   {"write_csv", config.output.write_csv},
                   {"write_json", config.output.write_json}};
    return j;
}

bool run_config_equal(const RunConfig& a, const RunConfig& b) {
    return run_config_to_json(a) == run_config_to_json(b);
}

} // namespace qcollapse
