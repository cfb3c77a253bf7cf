#pragma once

#include <complex>
#include <string>

#include <Eigen/Dense>

#include "qcollapse/model.hpp"
#include "qcollapse/trajectory.hpp"

namespace qcollapse {

/*
 * Two-point boundary value solver for the nonlocal evolution equation
 *
 *   Cddot_jk = (2i/hbar) E_jk Cdot_jk + (mu/B) Delta_jk^2 C_jk
 *              + (2 nu/B) C~_jk                       (unconstrained)
 *
 * with C~_jk(t) = sum_lm Delta_jm Delta_lk C_lm(t)
 *                   Int dt' C*_lm(t') C_jk(t') f(t-t')
 *                   exp(-i (E_jk - E_lm)(t'-t)/hbar).
 *
 * The constrained variant adds the normalization reaction -(2T lambda / B) C_jk
 * with lambda eliminated through the second derivative of the norm.
 *
 * Discrete system (square, per mode): node 0 carries C(t_i) = C_init, node 1
 * carries the one-sided Cdot(t_i) = 0 preparation row, nodes 2..N-2 carry the
 * interior residual, node N-1 carries the natural boundary condition (the
 * endpoint gradient of the discrete action).
 */

enum class SolveVariant { Unconstrained, Constrained };
enum class SolveStrategy { StationarityNewton, PicardRelaxation };
enum class InitialGuess { ConstantHold, PhaseRotating };

struct SolveConfig {
    SolveVariant variant = SolveVariant::Unconstrained;
    SolveStrategy strategy = SolveStrategy::StationarityNewton;
    int max_iters = 60;
    double residual_tol = 1e-10;
    int continuation_steps_nu = 1;
    InitialGuess initial_guess = InitialGuess::ConstantHold;
    // Unknown-count cap for the dense Jacobian path; larger systems assemble
    // the banded Jacobian sparsely.
    int dense_unknown_limit = 20000;

    void validate() const;
};

struct SolveResult {
    CoefficientTrajectory trajectory;
    bool converged = false;
    double final_residual_norm = 0.0;
    int iterations = 0;
    Eigen::VectorXd lambda_trace; // constrained variant only, lambda(t) per node
    double nbc_residual = 0.0;    // max-abs over modes of the endpoint gradient
    double cdot_tf_norm = 0.0;    // max-abs of the discrete derivative at t_f
    std::string diagnostics;      // non-empty on failure paths
};

// Nonlocal mode vector C~ at one node (trapezoid over the kernel band).
Eigen::VectorXcd c_tilde(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                         const Couplings& coup, int node);

// Same, evaluated at every node: row n = C~(t_n).
Eigen::MatrixXcd c_tilde_field(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                               const Couplings& coup);

// Brute-force references that ignore the band restriction.
Eigen::VectorXcd c_tilde_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                               const Couplings& coup, int node);
Eigen::MatrixXcd c_tilde_field_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                     const Couplings& coup);

// Interior residual of the unconstrained equation at nodes 1..N-2 (other rows
// zero). Equals -(dS/dC*)/(B dt) of the discrete action at those nodes.
Eigen::MatrixXcd ide_residual_unconstrained(const CoefficientTrajectory& traj,
                                            const ModeSpectrum& spec, const Couplings& coup);

// Lagrange multiplier of the constrained variant at one node; real by
// construction. imag_residue_out (optional) receives |Im sum_jk C* C~| at the
// node, a check on the conjugate-pairing symmetry of the assembled C~ field.
double lambda_of_t(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                   const Couplings& coup, int node, double* imag_residue_out = nullptr);

Eigen::MatrixXcd ide_residual_constrained(const CoefficientTrajectory& traj,
                                          const ModeSpectrum& spec, const Couplings& coup);

// Natural boundary condition: exact derivative of the discrete total action
// with respect to the final-node coefficients, one complex entry per mode.
Eigen::VectorXcd nbc_residual(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                              const Couplings& coup);

// Endpoint gradient at t_i (diagnostic counterpart of nbc_residual).
Eigen::VectorXcd initial_endpoint_gradient(const CoefficientTrajectory& traj,
                                           const ModeSpectrum& spec, const Couplings& coup);

SolveResult solve_bvp(const Eigen::VectorXcd& initial_c, const ModeSpectrum& spec,
                      const Couplings& coup, const TimeGrid& grid, const SolveConfig& config);

const char* solve_variant_name(SolveVariant v);
const char* solve_strategy_name(SolveStrategy s);
const char* initial_guess_name(InitialGuess g);
SolveVariant solve_variant_from_name(const std::string& name);
SolveStrategy solve_strategy_from_name(const std::string& name);
InitialGuess initial_guess_from_name(const std::string& name);

} // namespace qcollapse
