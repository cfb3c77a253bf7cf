#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "qcollapse/model.hpp"
#include "qcollapse/solver.hpp"
#include "qcollapse/trajectory.hpp"

namespace qcollapse {

// Hidden variable of a realization: the measurement duration T, drawn from a
// uniform window. Initial phase jitter is an optional second hidden variable
// and is off by default; it leaves the preparation weights untouched.
struct HiddenVariableDistribution {
    double T_center = 1.0;
    double T_halfwidth = 0.0;
    // Only the uniform law is implemented; the field exists so configs name it.
    std::string law = "uniform";
    double initial_phase_jitter = 0.0; // radians

    void validate() const;
};

struct RealizationOutcome {
    double T = 0.0;
    int dominant_j = 0;
    double purity = 0.0;
    double agreement_residual = 0.0;
    bool converged = false;
    bool collapsed = false;
    double final_weight = 0.0;
    int iterations = 0;
};

struct EnsembleReport {
    int n_realizations = 0;
    std::vector<RealizationOutcome> per_realization;
    // Over collapsed & converged realizations; empty when there are none.
    std::vector<double> frequencies;
    std::vector<double> initial_weights; // normalized P_j(t_i)
    std::optional<double> max_abs_deviation;
    std::optional<double> chi_square;
    std::optional<double> chi_square_p_value;
    int n_collapsed = 0;
    int n_uncollapsed = 0;
    int n_diverged = 0;
    // Realized window condition 2*T_halfwidth*dE_min/hbar; negative if the
    // spectrum has no two distinct combined energies.
    double window_energy_ratio = 0.0;
    // Ensemble-and-time average of the phase term Re{(2i/hbar) E C* Cdot}.
    double phase_term_average = 0.0;
    // Per outcome class: max over realizations of the drift bound 2T Int|p|.
    std::vector<double> drift_bound_max;
};

// One fully specified realization family: everything but the hidden variable.
struct EnsembleInstance {
    ModeSpectrum spec;
    Couplings couplings;
    double t_i = 0.0;
    int n_nodes = 0;
    Eigen::VectorXcd initial_c;
    SolveConfig solve;
    CollapseThresholds collapse;
};

EnsembleReport run_ensemble(const EnsembleInstance& instance,
                            const HiddenVariableDistribution& distribution, int n,
                            std::uint64_t seed, int threads = 1);

// Hidden-variable draws of one realization: the duration and the (possibly
// phase-jittered) preparation. Deterministic in (seed, index); used by the
// runner and by anything that needs to reproduce a single realization.
struct RealizationInputs {
    double T = 0.0;
    Eigen::VectorXcd initial_c;
};

RealizationInputs realization_inputs(const EnsembleInstance& instance,
                                     const HiddenVariableDistribution& distribution,
                                     std::uint64_t seed, int index);

// Moving average <<C^2_jk>>(t) = Int dt' f(t - t') |C_jk(t')|^2, banded trapezoid.
double moving_average(const CoefficientTrajectory& traj, const Couplings& coup, int node,
                      int mode);

// Single-realization integrand p(t) of the outcome-drift bound, one column per
// outcome class j, plus the bound 2T Int |p| per class.
struct DriftProbe {
    Eigen::MatrixXd p_of_t; // (n_nodes, J)
    Eigen::VectorXd bound;  // (J)
};

DriftProbe drift_probe(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                       const Couplings& coup);

// Ensemble mean of the time-averaged phase term; exactly antisymmetric under
// complex conjugation of a trajectory.
double phase_term_average_check(const std::vector<CoefficientTrajectory>& ensemble,
                                const ModeSpectrum& spec, const Couplings& coup);

// Deterministic per-realization stream, independent of draw order.
class SplitMixStream {
public:
    explicit SplitMixStream(std::uint64_t seed) : state_(seed) {}
    std::uint64_t next_u64();
    double next_unit();                        // [0, 1)
    double next_symmetric();                   // [-1, 1)
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index);

private:
    std::uint64_t state_;
};

} // namespace qcollapse
