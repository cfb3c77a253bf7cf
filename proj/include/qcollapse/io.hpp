#pragma once

#include <string>

#include "qcollapse/config.hpp"
#include "qcollapse/ensemble.hpp"
#include "qcollapse/trajectory.hpp"

namespace qcollapse {

const char* version_string();

// Decimal formatting used for every numeric output file: 17 significant
// digits, enough for a lossless double round trip.
std::string format_double(double x);

// Trajectory CSV: header "t,re_c_j_k,im_c_j_k,..." then one row per node.
void write_trajectory_csv(const std::string& path, const CoefficientTrajectory& traj,
                          const ModeSpectrum& spec);
CoefficientTrajectory read_trajectory_csv(const std::string& path, const ModeSpectrum& spec,
                                          const TimeGrid& grid);

// JSON form: grid metadata plus per-mode re/im arrays.
json trajectory_to_json(const CoefficientTrajectory& traj, const ModeSpectrum& spec);

json ensemble_report_to_json(const EnsembleReport& report);
void write_text_file(const std::string& path, const std::string& contents);

void write_frequencies_csv(const std::string& path, const EnsembleReport& report,
                           const ModeSpectrum& spec);

} // namespace qcollapse
