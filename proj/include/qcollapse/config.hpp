#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "qcollapse/ensemble.hpp"
#include "qcollapse/model.hpp"
#include "qcollapse/solver.hpp"
#include "qcollapse/trajectory.hpp"

namespace qcollapse {

using json = nlohmann::ordered_json;

struct EnsembleConfig {
    HiddenVariableDistribution distribution;
    int n = 1;
    std::uint64_t seed = 0;
    double min_converged_fraction = 0.9;
};

struct SweepConfig {
    std::vector<double> mu{};
    std::vector<double> nu{};
    std::vector<double> tau{};
    std::vector<double> T{};
};

struct OutputConfig {
    std::string directory = "run";
    bool retain_trajectories = false;
    bool write_csv = true;
    bool write_json = true;
};

// Full run configuration. Parsing is strict: unknown keys anywhere are a
// ConfigError, so configs stay reproducible records of what actually ran.
struct RunConfig {
    ModeSpectrum spec;
    Couplings couplings;
    TimeGrid grid;
    Eigen::VectorXcd initial_c;
    SolveConfig solve;
    CollapseThresholds collapse;
    std::optional<EnsembleConfig> ensemble;
    std::optional<SweepConfig> sweep;
    OutputConfig output;

    void validate() const;
};

RunConfig parse_run_config(const json& j);
RunConfig load_run_config(const std::string& path);
json run_config_to_json(const RunConfig& config);

bool run_config_equal(const RunConfig& a, const RunConfig& b);

} // namespace qcollapse
