#include "qcollapse/trajectory.hpp"

#include <cmath>

#include "qcollapse/errors.hpp"

namespace qcollapse {

void CoefficientTrajectory::validate() const {
    grid.validate();
    if (values.rows() != grid.n_nodes) {
        throw ArgumentError("trajectory rows do not match grid nodes");
    }
    if (values.cols() < 1) {
        throw ArgumentError("trajectory has no modes");
    }
    if (!values.allFinite()) {
        throw ArgumentError("trajectory contains non-finite entries");
    }
}

namespace {

void check_node(const CoefficientTrajectory& traj, int node) {
    if (node < 0 || node >= traj.n_nodes()) {
        throw ArgumentError("node index " + std::to_string(node) + " out of range");
    }
}

} // namespace

double total_weight(const CoefficientTrajectory& traj, int node) {
    check_node(traj, node);
    return traj.values.row(node).squaredNorm();
}

Eigen::VectorXd outcome_weights(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                int node) {
    check_node(traj, node);
    if (spec.num_modes() != traj.n_modes()) {
        throw ArgumentError("spectrum and trajectory disagree on mode count");
    }
    Eigen::VectorXd p = Eigen::VectorXd::Zero(spec.num_system_modes());
    for (int j = 0; j < spec.num_system_modes(); ++j) {
        for (int k = 0; k < spec.num_pointer_modes(); ++k) {
            p[j] += std::norm(traj.values(node, spec.flat(j, k)));
        }
    }
    return p;
}

Eigen::MatrixXcd time_derivative(const CoefficientTrajectory& traj) {
    const int n = traj.n_nodes();
    if (n < 3) {
        throw ArgumentError("time derivative needs at least 3 nodes");
    }
    const double dt = traj.grid.dt();
    Eigen::MatrixXcd d(n, traj.n_modes());
    d.row(0) = (-3.0 * traj.values.row(0) + 4.0 * traj.values.row(1) - traj.values.row(2)) /
               (2.0 * dt);
    for (int q = 1; q < n - 1; ++q) {
        d.row(q) = (traj.values.row(q + 1) - traj.values.row(q - 1)) / (2.0 * dt);
    }
    d.row(n - 1) = (3.0 * traj.values.row(n - 1) - 4.0 * traj.values.row(n - 2) +
                    traj.values.row(n - 3)) /
                   (2.0 * dt);
    return d;
}

CollapseMetrics collapse_metrics(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                 const CollapseThresholds& thresholds) {
    const int last = traj.n_nodes() - 1;
    const double weight = total_weight(traj, last);
    if (weight < 1e-12) {
        throw DegenerateStateError("total weight at t_f below 1e-12; outcome undefined");
    }

    CollapseMetrics m;
    double mismatched = 0.0;
    for (int j = 0; j < spec.num_system_modes(); ++j) {
        for (int k = 0; k < spec.num_pointer_modes(); ++k) {
            if (delta(spec, j, k) != 0.0) {
                mismatched += std::norm(traj.values(last, spec.flat(j, k)));
            }
        }
    }
    m.agreement_residual = mismatched / weight;

    const Eigen::VectorXd p = outcome_weights(traj, spec, last);
    int best = 0;
    for (int j = 1; j < p.size(); ++j) {
        if (p[j] > p[best]) best = j; // ties keep the lowest index
    }
    m.dominant_j = best;
    m.purity = p[best] / p.sum();
    m.collapsed = m.purity >= thresholds.purity && m.agreement_residual <= thresholds.agreement;
    return m;
}

} // namespace qcollapse
