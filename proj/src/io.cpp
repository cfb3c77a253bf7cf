#include "qcollapse/io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "qcollapse/errors.hpp"

#ifndef QCOLLAPSE_VERSION
#define QCOLLAPSE_VERSION "0.1.0-unknown"
#endif

namespace qcollapse {

const char* version_string() { return QCOLLAPSE_VERSION; }

std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

void write_text_file(const std::string& path, const std::string& contents) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out << contents;
}

void write_trajectory_csv(const std::string& path, const CoefficientTrajectory& traj,
                          const ModeSpectrum& spec) {
    traj.validate();
    if (traj.n_modes() != spec.num_modes()) {
        throw ArgumentError("trajectory mode count does not match the spectrum");
    }
    std::ostringstream out;
    out << "t";
    for (int j = 0; j < spec.num_system_modes(); ++j) {
        for (int k = 0; k < spec.num_pointer_modes(); ++k) {
            out << ",re_c_" << j << "_" << k << ",im_c_" << j << "_" << k;
        }
    }
    out << "\n";
    for (int n = 0; n < traj.n_nodes(); ++n) {
        out << format_double(traj.grid.t(n));
        for (int m = 0; m < traj.n_modes(); ++m) {
            out << "," << format_double(traj.values(n, m).real()) << ","
                << format_double(traj.values(n, m).imag());
        }
        out << "\n";
    }
    write_text_file(path, out.str());
}

CoefficientTrajectory read_trajectory_csv(const std::string& path, const ModeSpectrum& spec,
                                          const TimeGrid& grid) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open trajectory file '" + path + "'");
    std::string line;
    if (!std::getline(in, line)) throw ConfigError("trajectory file '" + path + "' is empty");

    const int M = spec.num_modes();
    const size_t expected_cols = 1 + 2 * static_cast<size_t>(M);
    {
        size_t cols = 1;
        for (char ch : line) {
            if (ch == ',') ++cols;
        }
        if (cols != expected_cols) {
            throw ConfigError("trajectory file has " + std::to_string(cols) +
                              " columns, expected " + std::to_string(expected_cols));
        }
    }

    CoefficientTrajectory traj;
    traj.grid = grid;
    traj.values.resize(grid.n_nodes, M);
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (row >= grid.n_nodes) {
            throw ConfigError("trajectory file has more rows than grid nodes");
        }
        std::istringstream ls(line);
        std::string cell;
        std::vector<double> vals;
        while (std::getline(ls, cell, ',')) {
            try {
                vals.push_back(std::stod(cell));
            } catch (const std::exception&) {
                throw ConfigError("bad numeric cell '" + cell + "' in trajectory row " +
                                  std::to_string(row + 1));
            }
        }
        if (vals.size() != expected_cols) {
            throw ConfigError("trajectory row " + std::to_string(row + 1) + " has " +
                              std::to_string(vals.size()) + " cells, expected " +
                              std::to_string(expected_cols));
        }
        for (int m = 0; m < M; ++m) {
            traj.values(row, m) = std::complex<double>(vals[1 + 2 * m], vals[2 + 2 * m]);
        }
        ++row;
    }
    if (row != grid.n_nodes) {
        throw ConfigError("trajectory file has " + std::to_string(row) + " rows, expected " +
                          std::to_string(grid.n_nodes));
    }
    traj.validate();
    return traj;
}

json trajectory_to_json(const CoefficientTrajectory& traj, const ModeSpectrum& spec) {
    traj.validate();
    if (traj.n_modes() != spec.num_modes()) {
        throw ArgumentError("trajectory mode count does not match the spectrum");
    }
    json j;
    j["grid"] = {{"t_i", traj.grid.t_i}, {"t_f", traj.grid.t_f}, {"n_nodes", traj.grid.n_nodes}};
    json t = json::array();
    for (int n = 0; n < traj.n_nodes(); ++n) t.push_back(traj.grid.t(n));
    j["t"] = t;
    json modes = json::array();
    for (int jj = 0; jj < spec.num_system_modes(); ++jj) {
        for (int k = 0; k < spec.num_pointer_modes(); ++k) {
            const int m = spec.flat(jj, k);
            json re = json::array(), im = json::array();
            for (int n = 0; n < traj.n_nodes(); ++n) {
                re.push_back(traj.values(n, m).real());
                im.push_back(traj.values(n, m).imag());
            }
            modes.push_back({{"j", jj}, {"k", k}, {"re", re}, {"im", im}});
        }
    }
    j["modes"] = modes;
    return j;
}

namespace {

json optional_to_json(const std::optional<double>& v) {
    if (!v || !std::isfinite(*v)) return nullptr;
    return *v;
}

} // namespace

json ensemble_report_to_json(const EnsembleReport& report) {
    json j;
    j["n_realizations"] = report.n_realizations;
    j["n_collapsed"] = report.n_collapsed;
    j["n_uncollapsed"] = report.n_uncollapsed;
    j["n_diverged"] = report.n_diverged;
    j["initial_weights"] = report.initial_weights;
    j["frequencies"] = report.frequencies;
    j["max_abs_deviation"] = optional_to_json(report.max_abs_deviation);
    j["chi_square"] = optional_to_json(report.chi_square);
    j["chi_square_p_value"] = optional_to_json(report.chi_square_p_value);
    j["window_energy_ratio"] = report.window_energy_ratio;
    j["phase_term_average"] = report.phase_term_average;
    j["drift_bound_max"] = report.drift_bound_max;
    json rows = json::array();
    for (const auto& r : report.per_realization) {
        rows.push_back({{"T", r.T},
                        {"dominant_j", r.dominant_j},
                        {"purity", r.purity},
                        {"agreement_residual", r.agreement_residual},
                        {"converged", r.converged},
                        {"collapsed", r.collapsed},
                        {"final_weight", r.final_weight},
                        {"iterations", r.iterations}});
    }
    j["per_realization"] = rows;
    return j;
}

void write_frequencies_csv(const std::string& path, const EnsembleReport& report,
                           const ModeSpectrum& spec) {
    std::ostringstream out;
    out << "j,sigma1,initial_weight,frequency\n";
    for (int j = 0; j < spec.num_system_modes(); ++j) {
        const double freq = report.frequencies.empty() ? 0.0 : report.frequencies[j];
        out << j << "," << format_double(spec.sigma1[j]) << ","
            << format_double(report.initial_weights[j]) << "," << format_double(freq) << "\n";
    }
    write_text_file(path, out.str());
}

} // namespace qcollapse
