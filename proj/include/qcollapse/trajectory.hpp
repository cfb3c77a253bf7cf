#pragma once

#include <complex>

#include <Eigen/Dense>

#include "qcollapse/model.hpp"

namespace qcollapse {

// Joint-state coefficients C_jk sampled on the grid. Row n holds the mode
// vector at node n, columns follow the row-major flat index of ModeSpectrum.
struct CoefficientTrajectory {
    TimeGrid grid;
    Eigen::MatrixXcd values; // (n_nodes, J*K)

    int n_nodes() const { return static_cast<int>(values.rows()); }
    int n_modes() const { return static_cast<int>(values.cols()); }

    void validate() const; // shape vs grid, all entries finite
};

// Sum of |C_jk|^2 at one node. Equals 1 only where normalization is pinned
// (the endpoints); mid-run weight is a measured quantity, not a constraint.
double total_weight(const CoefficientTrajectory& traj, int node);

// Outcome weights P_j = sum_k |C_jk|^2 at one node.
Eigen::VectorXd outcome_weights(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                int node);

// Nodal derivative: second-order central stencils inside, second-order
// one-sided stencils at the two endpoints.
Eigen::MatrixXcd time_derivative(const CoefficientTrajectory& traj);

struct CollapseThresholds {
    double purity = 0.99;
    double agreement = 0.01;
};

struct CollapseMetrics {
    // Fraction of final weight sitting on modes with mismatched eigenvalues.
    double agreement_residual = 0.0;
    // Largest normalized outcome weight at t_f.
    double purity = 0.0;
    int dominant_j = 0;
    bool collapsed = false;
};

CollapseMetrics collapse_metrics(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                 const CollapseThresholds& thresholds = {});

} // namespace qcollapse
