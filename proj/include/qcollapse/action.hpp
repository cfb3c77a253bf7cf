#pragma once

#include <Eigen/Dense>

#include "qcollapse/model.hpp"
#include "qcollapse/trajectory.hpp"

namespace qcollapse {

/*
 * Discretization of the action
 *
 *   S = S1+S2 + S_I + R_I
 *
 *   s12 integrand: B sum_jk [ |Cdot_jk|^2 - (2 E_jk / hbar) Im{C*_jk Cdot_jk} ]
 *   sI  integrand: mu sum_jk Delta_jk^2 |C_jk|^2
 *   rI  integrand: nu f(t1-t2) sum_{jk,lm} Delta_jm Delta_lk
 *                     C*_jk(t1) C*_lm(t2) C_lm(t1) C_jk(t2)
 *                     exp(-i (E_jk - E_lm)(t2 - t1) / hbar)
 *
 * s12 is integrated element-wise on the piecewise-linear interpolant, sI by
 * the nodal trapezoid rule, rI by the tensor-product trapezoid rule restricted
 * to the kernel band. The element form of s12 makes the exact gradient of the
 * discrete action reproduce compact second-order stencils at every interior
 * node, so the assembled evolution residual and the action gradient agree to
 * round-off rather than to discretization order.
 */

struct ActionBreakdown {
    double s12 = 0.0;
    double sI = 0.0;
    double rI = 0.0;
    double total = 0.0;
};

double eval_s12(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                const Couplings& coup);

double eval_sI(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
               const Couplings& coup);

// Banded evaluation: node pairs farther apart than the kernel support are
// skipped. Identical to the dense sum for compact kernels since the omitted
// kernel values are exactly zero.
double eval_rI(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
               const Couplings& coup);

// Brute-force reference: visits all node pairs regardless of support.
double eval_rI_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                     const Couplings& coup);

ActionBreakdown action_breakdown(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                 const Couplings& coup);

// Central finite-difference gradient of the total action with respect to the
// real and imaginary part of every nodal coefficient. Step h <= 0 selects the
// default 1e-6 * max(1, |C|_inf).
struct ActionGradient {
    Eigen::MatrixXd d_re; // (n_nodes, modes)
    Eigen::MatrixXd d_im;

    // Conjugate-pairing convention: g = (dS/dRe + i dS/dIm) / 2 = dS/dC*.
    Eigen::MatrixXcd wirtinger() const {
        return 0.5 * (d_re.cast<std::complex<double>>() +
                      std::complex<double>(0.0, 1.0) * d_im.cast<std::complex<double>>());
    }
};

ActionGradient action_gradient_fd(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                  const Couplings& coup, double h = -1.0);

} // namespace qcollapse
