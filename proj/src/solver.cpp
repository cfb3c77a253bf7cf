#include "qcollapse/solver.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include <Eigen/Sparse>

#include "qcollapse/kernel.hpp"

namespace qcollapse {

namespace {

using cd = std::complex<double>;
using Triplets = std::vector<Eigen::Triplet<double>>;

struct Problem {
    const ModeSpectrum* spec = nullptr;
    Couplings coup;
    TimeGrid grid;
    Eigen::VectorXcd initial_c;
    SolveVariant variant = SolveVariant::Unconstrained;
    // When set, the nonlocal term is held fixed at this field (Picard sweeps).
    const Eigen::MatrixXcd* frozen_ctilde = nullptr;

    int N = 0;
    int M = 0;
    int K = 0;
    int band = 0;
    std::vector<double> dlt; // flat Delta_jk
    std::vector<double> en;  // flat E_jk

    double dt() const { return grid.dt(); }
    // Real-vector row index of the real part of C(node, mode).
    int ri(int node, int mode) const { return 2 * (node * M + mode); }

    // The constrained variant carries one multiplier unknown per evolution row
    // block: nodes 2..N-2 plus the endpoint multiplier of the pinned final
    // normalization. Their residual rows are the normalization conditions.
    int n_multipliers() const {
        return variant == SolveVariant::Constrained ? N - 2 : 0;
    }
    int lam_index(int node) const {
        return 2 * N * M + (node == N - 1 ? N - 3 : node - 2);
    }
    int n_unknowns() const { return 2 * N * M + n_multipliers(); }
};

Problem make_problem(const ModeSpectrum& spec, const Couplings& coup, const TimeGrid& grid,
                     SolveVariant variant, const Eigen::VectorXcd& initial_c) {
    Problem p;
    p.spec = &spec;
    p.coup = coup;
    p.grid = grid;
    p.variant = variant;
    p.initial_c = initial_c;
    p.N = grid.n_nodes;
    p.M = spec.num_modes();
    p.K = spec.num_pointer_modes();
    p.band = support_halfwidth(coup.kernel, grid);
    p.dlt.resize(p.M);
    p.en.resize(p.M);
    for (int j = 0; j < spec.num_system_modes(); ++j) {
        for (int k = 0; k < spec.num_pointer_modes(); ++k) {
            p.dlt[spec.flat(j, k)] = delta(spec, j, k);
            p.en[spec.flat(j, k)] = combined_energy(spec, j, k);
        }
    }
    return p;
}

void check_shapes(const CoefficientTrajectory& traj, const ModeSpectrum& spec) {
    if (traj.n_modes() != spec.num_modes()) {
        throw ArgumentError("trajectory mode count does not match the spectrum");
    }
    if (traj.n_nodes() != traj.grid.n_nodes) {
        throw ArgumentError("trajectory rows do not match its grid");
    }
}

// C~ at one node. mode_overlaps (optional, size MxM) receives
// I_AB = Int dt' C*_B C_A f exp(-i(E_A - E_B)(t'-t)/hbar), needed by the
// Jacobian. The integral is accumulated as sum_p w_p f * v v^H with
// v_A(p) = C_A(p) exp(-i E_A (t_p - t_q)/hbar), which keeps I_BA = conj(I_AB)
// exact.
Eigen::VectorXcd c_tilde_node(const Problem& p, const Eigen::MatrixXcd& c, int q, int band,
                              Eigen::MatrixXcd* mode_overlaps = nullptr,
                              bool exploit_support = true) {
    const int M = p.M;
    Eigen::MatrixXcd overlaps = Eigen::MatrixXcd::Zero(M, M);
    const int lo = std::max(0, q - band);
    const int hi = std::min(p.N - 1, q + band);
    const double tq = p.grid.t(q);
    Eigen::VectorXcd v(M);
    for (int node = lo; node <= hi; ++node) {
        const double dtq = p.grid.t(node) - tq;
        const double f = kernel_eval(p.coup.kernel, -dtq); // f(t_q - t_p), even
        if (exploit_support && f == 0.0) continue;
        for (int m = 0; m < M; ++m) {
            v[m] = c(node, m) * std::polar(1.0, -p.en[m] * dtq / p.coup.hbar);
        }
        const double wf = p.grid.weight(node) * f;
        overlaps.noalias() += wf * (v * v.adjoint());
    }

    Eigen::VectorXcd out = Eigen::VectorXcd::Zero(M);
    for (int A = 0; A < M; ++A) {
        const int jA = A / p.K, kA = A % p.K;
        cd acc(0.0, 0.0);
        for (int B = 0; B < M; ++B) {
            const int lB = B / p.K, mB = B % p.K;
            const double pref = p.dlt[jA * p.K + mB] * p.dlt[lB * p.K + kA];
            if (pref == 0.0) continue;
            acc += pref * c(q, B) * overlaps(A, B);
        }
        out[A] = acc;
    }
    if (mode_overlaps) *mode_overlaps = std::move(overlaps);
    return out;
}

Eigen::MatrixXcd c_tilde_all(const Problem& p, const Eigen::MatrixXcd& c, int band) {
    Eigen::MatrixXcd out(p.N, p.M);
    for (int q = 0; q < p.N; ++q) {
        out.row(q) = c_tilde_node(p, c, q, band).transpose();
    }
    return out;
}

// Nodal derivative with the public trajectory stencils.
Eigen::MatrixXcd derivative_field(const Problem& p, const Eigen::MatrixXcd& c) {
    Eigen::MatrixXcd d(p.N, p.M);
    const double dt = p.dt();
    d.row(0) = (-3.0 * c.row(0) + 4.0 * c.row(1) - c.row(2)) / (2.0 * dt);
    for (int q = 1; q < p.N - 1; ++q) d.row(q) = (c.row(q + 1) - c.row(q - 1)) / (2.0 * dt);
    d.row(p.N - 1) = (3.0 * c.row(p.N - 1) - 4.0 * c.row(p.N - 2) + c.row(p.N - 3)) / (2.0 * dt);
    return d;
}

// lambda_hat = 2 T lambda / B at every node, eliminated as in the analytic
// treatment (unit norm assumed). Used by the public diagnostic ops and as the
// solver's multiplier initializer.
Eigen::VectorXd lambda_hat_field(const Problem& p, const Eigen::MatrixXcd& c,
                                 const Eigen::MatrixXcd& cdot, const Eigen::MatrixXcd& ctil) {
    Eigen::VectorXd lh(p.N);
    const double gain = p.coup.nonlocal_gain();
    for (int q = 0; q < p.N; ++q) {
        double s = 0.0;
        for (int m = 0; m < p.M; ++m) {
            const cd cj = c(q, m);
            const cd dj = cdot(q, m);
            s += std::norm(dj);
            s += (p.coup.mu / p.coup.B) * p.dlt[m] * p.dlt[m] * std::norm(cj);
            // Re{(2i/hbar) E C* Cdot} = -(2E/hbar) Im{C* Cdot}
            s -= (2.0 * p.en[m] / p.coup.hbar) * std::imag(std::conj(cj) * dj);
            s += gain * std::real(std::conj(cj) * ctil(q, m));
        }
        lh[q] = -s;
    }
    return lh;
}

// Interior evolution residual at nodes 1..N-2; rows 0 and N-1 stay zero.
// Identical to -(dS/dC*)/(B dt) of the discrete action at those nodes.
// lambda_hat, when given, supplies the reaction term of the constrained form.
Eigen::MatrixXcd interior_residual(const Problem& p, const Eigen::MatrixXcd& c,
                                   const Eigen::MatrixXcd& ctil,
                                   const Eigen::VectorXd* lambda_hat) {
    const double dt = p.dt();
    const double gain = p.coup.nonlocal_gain();
    Eigen::MatrixXcd r = Eigen::MatrixXcd::Zero(p.N, p.M);
    for (int q = 1; q < p.N - 1; ++q) {
        for (int m = 0; m < p.M; ++m) {
            const cd second = (c(q + 1, m) - 2.0 * c(q, m) + c(q - 1, m)) / (dt * dt);
            const cd first = (c(q + 1, m) - c(q - 1, m)) / (2.0 * dt);
            cd rhs = cd(0.0, 2.0 * p.en[m] / p.coup.hbar) * first;
            rhs += (p.coup.mu / p.coup.B) * p.dlt[m] * p.dlt[m] * c(q, m);
            rhs += gain * ctil(q, m);
            if (lambda_hat) rhs += (*lambda_hat)[q] * c(q, m);
            r(q, m) = second - rhs;
        }
    }
    return r;
}

// Exact endpoint gradient of the discrete action at node N-1 (the natural
// boundary condition) or node 0.
Eigen::VectorXcd endpoint_gradient(const Problem& p, const Eigen::MatrixXcd& c,
                                   const Eigen::MatrixXcd& ctil, bool final_end) {
    const double dt = p.dt();
    const double w = 0.5 * dt;
    Eigen::VectorXcd g(p.M);
    if (final_end) {
        const int n = p.N - 1;
        for (int m = 0; m < p.M; ++m) {
            cd v = p.coup.B * ((c(n, m) - c(n - 1, m)) / dt -
                               cd(0.0, p.en[m] / p.coup.hbar) * c(n - 1, m));
            v += w * (p.coup.mu * p.dlt[m] * p.dlt[m] * c(n, m) + 2.0 * p.coup.nu * ctil(n, m));
            g[m] = v;
        }
    } else {
        for (int m = 0; m < p.M; ++m) {
            cd v = p.coup.B *
                   ((c(0, m) - c(1, m)) / dt + cd(0.0, p.en[m] / p.coup.hbar) * c(1, m));
            v += w * (p.coup.mu * p.dlt[m] * p.dlt[m] * c(0, m) + 2.0 * p.coup.nu * ctil(0, m));
            g[m] = v;
        }
    }
    return g;
}

// Solver state: coefficients plus, for the constrained variant, the discrete
// multipliers paired with the normalization rows.
struct SolverState {
    Eigen::MatrixXcd c;
    Eigen::VectorXd lam; // size N-2 (nodes 2..N-2 and N-1) or empty
};

Eigen::MatrixXcd nonlocal_field(const Problem& p, const Eigen::MatrixXcd& c) {
    if (p.frozen_ctilde) return *p.frozen_ctilde;
    if (p.coup.nu == 0.0) return Eigen::MatrixXcd::Zero(p.N, p.M);
    return c_tilde_all(p, c, p.band);
}

/*
 * Discrete system.
 *
 * Unconstrained: per mode, node 0 pins C(t_i), node 1 pins the one-sided
 * Cdot(t_i) = 0 preparation row, nodes 2..N-2 carry the evolution residual,
 * node N-1 the scaled natural boundary condition.
 *
 * Constrained: the evolution rows gain the reaction -lambda_hat(q) C(q) with
 * lambda_hat an unknown per row block, the NBC row gains the endpoint
 * multiplier of the pinned final normalization, and each multiplier is paired
 * with the row sum|C(q)|^2 - 1 = 0. The eliminated closed form of lambda_hat
 * is recovered at the solution; keeping the multipliers as unknowns enforces
 * the norm at the nodes themselves instead of letting first-order drift
 * integrate along the grid.
 */
Eigen::VectorXd system_residual(const Problem& p, const SolverState& s) {
    const double dt = p.dt();
    const Eigen::MatrixXcd& c = s.c;
    const Eigen::MatrixXcd ctil = nonlocal_field(p, c);
    const Eigen::MatrixXcd r = interior_residual(p, c, ctil, nullptr);
    const Eigen::VectorXcd nbc = endpoint_gradient(p, c, ctil, true);
    const double nbc_scale = 2.0 / (p.coup.B * dt);
    const bool constrained = p.variant == SolveVariant::Constrained;

    Eigen::VectorXd F(p.n_unknowns());
    for (int m = 0; m < p.M; ++m) {
        const cd prep = c(0, m) - p.initial_c[m];
        F[p.ri(0, m)] = prep.real();
        F[p.ri(0, m) + 1] = prep.imag();
        const cd cdot0 = (-3.0 * c(0, m) + 4.0 * c(1, m) - c(2, m)) / (2.0 * dt);
        F[p.ri(1, m)] = cdot0.real();
        F[p.ri(1, m) + 1] = cdot0.imag();
        for (int q = 2; q < p.N - 1; ++q) {
            cd val = r(q, m);
            if (constrained) val -= s.lam[q - 2] * c(q, m);
            F[p.ri(q, m)] = val.real();
            F[p.ri(q, m) + 1] = val.imag();
        }
        cd nb = nbc_scale * nbc[m];
        if (constrained) nb -= s.lam[p.N - 3] * c(p.N - 1, m);
        F[p.ri(p.N - 1, m)] = nb.real();
        F[p.ri(p.N - 1, m) + 1] = nb.imag();
    }
    if (constrained) {
        for (int q = 2; q < p.N - 1; ++q) {
            F[p.lam_index(q)] = c.row(q).squaredNorm() - 1.0;
        }
        F[p.lam_index(p.N - 1)] = c.row(p.N - 1).squaredNorm() - 1.0;
    }
    return F;
}

void add_linear_block(Triplets& trip, int row, int col, cd z) {
    if (z == cd(0.0, 0.0)) return;
    trip.emplace_back(row, col, z.real());
    trip.emplace_back(row, col + 1, -z.imag());
    trip.emplace_back(row + 1, col, z.imag());
    trip.emplace_back(row + 1, col + 1, z.real());
}

void add_antilinear_block(Triplets& trip, int row, int col, cd a) {
    if (a == cd(0.0, 0.0)) return;
    trip.emplace_back(row, col, a.real());
    trip.emplace_back(row, col + 1, a.imag());
    trip.emplace_back(row + 1, col, a.imag());
    trip.emplace_back(row + 1, col + 1, -a.real());
}

// Derivative of C~_A(q) with respect to nodal coefficients, scaled by `scale`,
// added to the Jacobian rows of (row_node, A). Works from the same overlap
// integrals as the residual; the conjugated slot produces antilinear blocks.
void add_ctilde_jacobian(Triplets& trip, const Problem& p, const Eigen::MatrixXcd& c, int q,
                         int row_node, double scale, const Eigen::MatrixXcd& overlaps) {
    const int M = p.M;
    const int lo = std::max(0, q - p.band);
    const int hi = std::min(p.N - 1, q + p.band);
    const double tq = p.grid.t(q);

    // Outer-factor contribution: dC~_A(q)/dC_B(q) = pref * I_AB.
    for (int A = 0; A < M; ++A) {
        const int jA = A / p.K, kA = A % p.K;
        const int row = p.ri(row_node, A);
        for (int B = 0; B < M; ++B) {
            const int lB = B / p.K, mB = B % p.K;
            const double pref = p.dlt[jA * p.K + mB] * p.dlt[lB * p.K + kA];
            if (pref == 0.0) continue;
            add_linear_block(trip, row, p.ri(q, B), scale * pref * overlaps(A, B));
        }
    }

    // Contributions through the overlap integral itself.
    Eigen::VectorXcd v(M);
    for (int node = lo; node <= hi; ++node) {
        const double dtq = p.grid.t(node) - tq;
        const double f = kernel_eval(p.coup.kernel, -dtq);
        if (f == 0.0) continue;
        const double wf = p.grid.weight(node) * f;
        for (int m = 0; m < M; ++m) {
            v[m] = c(node, m) * std::polar(1.0, -p.en[m] * dtq / p.coup.hbar);
        }
        for (int A = 0; A < M; ++A) {
            const int jA = A / p.K, kA = A % p.K;
            const int row = p.ri(row_node, A);
            const cd phase_A = std::polar(1.0, -p.en[A] * dtq / p.coup.hbar);
            // dI_AB/dC_A(node) = w f phase_A conj(v_B); summed over B against
            // the outer factors it lands in column (node, A).
            cd lin(0.0, 0.0);
            for (int B = 0; B < M; ++B) {
                const int lB = B / p.K, mB = B % p.K;
                const double pref = p.dlt[jA * p.K + mB] * p.dlt[lB * p.K + kA];
                if (pref == 0.0) continue;
                lin += pref * c(q, B) * std::conj(v[B]);
                // dI_AB/dC*_B(node) = w f v_A conj(phase_B)
                const cd anti = pref * c(q, B) * v[A] *
                                std::conj(std::polar(1.0, -p.en[B] * dtq / p.coup.hbar));
                add_antilinear_block(trip, row, p.ri(node, B), scale * wf * anti);
            }
            add_linear_block(trip, row, p.ri(node, A), scale * wf * phase_A * lin);
        }
    }
}

Triplets assemble_jacobian(const Problem& p, const SolverState& s) {
    const double dt = p.dt();
    const double gain = p.coup.nonlocal_gain();
    const Eigen::MatrixXcd& c = s.c;
    const bool constrained = p.variant == SolveVariant::Constrained;
    Triplets trip;
    trip.reserve(static_cast<size_t>(p.N) * p.M * (12 + 8 * p.M));

    for (int m = 0; m < p.M; ++m) {
        add_linear_block(trip, p.ri(0, m), p.ri(0, m), cd(1.0, 0.0));
        add_linear_block(trip, p.ri(1, m), p.ri(0, m), cd(-3.0 / (2.0 * dt), 0.0));
        add_linear_block(trip, p.ri(1, m), p.ri(1, m), cd(4.0 / (2.0 * dt), 0.0));
        add_linear_block(trip, p.ri(1, m), p.ri(2, m), cd(-1.0 / (2.0 * dt), 0.0));

        for (int q = 2; q < p.N - 1; ++q) {
            const int row = p.ri(q, m);
            const cd om(0.0, p.en[m] / (p.coup.hbar * dt));
            add_linear_block(trip, row, p.ri(q + 1, m), cd(1.0 / (dt * dt), 0.0) - om);
            add_linear_block(trip, row, p.ri(q - 1, m), cd(1.0 / (dt * dt), 0.0) + om);
            double diag = -2.0 / (dt * dt) - (p.coup.mu / p.coup.B) * p.dlt[m] * p.dlt[m];
            if (constrained) diag -= s.lam[q - 2];
            add_linear_block(trip, row, p.ri(q, m), cd(diag, 0.0));
            if (constrained) {
                trip.emplace_back(row, p.lam_index(q), -c(q, m).real());
                trip.emplace_back(row + 1, p.lam_index(q), -c(q, m).imag());
            }
        }

        // NBC row, scaled by 2/(B dt) like the evolution rows.
        const int row = p.ri(p.N - 1, m);
        const double sc = 2.0 / (p.coup.B * dt);
        double diag_end = sc * (p.coup.B / dt + 0.5 * dt * p.coup.mu * p.dlt[m] * p.dlt[m]);
        if (constrained) diag_end -= s.lam[p.N - 3];
        add_linear_block(trip, row, p.ri(p.N - 1, m), cd(diag_end, 0.0));
        add_linear_block(trip, row, p.ri(p.N - 2, m),
                         cd(-sc * p.coup.B / dt, -sc * p.coup.B * p.en[m] / p.coup.hbar));
        if (constrained) {
            trip.emplace_back(row, p.lam_index(p.N - 1), -c(p.N - 1, m).real());
            trip.emplace_back(row + 1, p.lam_index(p.N - 1), -c(p.N - 1, m).imag());
        }
    }

    if (constrained) {
        // Normalization rows: d(|C(q)|^2 - 1)/d(x, y) = (2x, 2y).
        auto norm_row = [&](int q) {
            const int row = p.lam_index(q);
            for (int m = 0; m < p.M; ++m) {
                trip.emplace_back(row, p.ri(q, m), 2.0 * c(q, m).real());
                trip.emplace_back(row, p.ri(q, m) + 1, 2.0 * c(q, m).imag());
            }
        };
        for (int q = 2; q < p.N - 1; ++q) norm_row(q);
        norm_row(p.N - 1);
    }

    if (p.coup.nu != 0.0 && !p.frozen_ctilde) {
        for (int q = 2; q < p.N - 1; ++q) {
            Eigen::MatrixXcd overlaps;
            c_tilde_node(p, c, q, p.band, &overlaps);
            add_ctilde_jacobian(trip, p, c, q, q, -gain, overlaps);
        }
        Eigen::MatrixXcd overlaps;
        c_tilde_node(p, c, p.N - 1, p.band, &overlaps);
        // (2/(B dt)) * (dt/2) * 2 nu = 2 nu / B = gain
        add_ctilde_jacobian(trip, p, c, p.N - 1, p.N - 1, gain, overlaps);
    }
    return trip;
}

void check_finite(const Eigen::VectorXd& v, const char* where) {
    if (!v.allFinite()) {
        throw NumericalBlowupError(std::string("non-finite values in ") + where);
    }
}

struct IterationReport {
    bool converged = false;
    int iterations = 0;
    double residual_norm = 0.0;
    std::string diagnostics;
};

void apply_step(const Problem& p, SolverState& s, const SolverState& from,
                const Eigen::VectorXd& step, double alpha) {
    for (int q = 0; q < p.N; ++q) {
        for (int m = 0; m < p.M; ++m) {
            const int idx = p.ri(q, m);
            s.c(q, m) = from.c(q, m) + alpha * cd(step[idx], step[idx + 1]);
        }
    }
    // The preparation row is linear with identity Jacobian; pinning it removes
    // factorization round-off so C(t_i) holds bitwise.
    s.c.row(0) = p.initial_c.transpose();
    for (int i = 0; i < s.lam.size(); ++i) {
        s.lam[i] = from.lam[i] + alpha * step[2 * p.N * p.M + i];
    }
}

IterationReport newton_solve(const Problem& p, SolverState& s, const SolveConfig& cfg) {
    const int n_real = p.n_unknowns();
    IterationReport rep;
    Eigen::VectorXd F = system_residual(p, s);
    check_finite(F, "initial residual");
    rep.residual_norm = F.lpNorm<Eigen::Infinity>();
    double merit = F.norm(); // line search runs on the smoother 2-norm

    // The C~ coupling fills a band of half-width `band`; with nu = 0 the
    // Jacobian is narrowly banded whatever the kernel. Dense factorization is
    // the fallback for wide bands on small systems.
    const bool wide_band =
        p.coup.nu != 0.0 && !p.frozen_ctilde && p.band >= p.N / 2;
    const bool use_dense =
        n_real <= 512 || (wide_band && p.N * p.M <= cfg.dense_unknown_limit && n_real <= 6000);

    for (int it = 0; it < cfg.max_iters && rep.residual_norm > cfg.residual_tol; ++it) {
        const Triplets trip = assemble_jacobian(p, s);
        Eigen::VectorXd step(n_real);
        if (use_dense) {
            Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n_real, n_real);
            for (const auto& t : trip) J(t.row(), t.col()) += t.value();
            Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
            step = lu.solve(-F);
        } else {
            Eigen::SparseMatrix<double> J(n_real, n_real);
            J.setFromTriplets(trip.begin(), trip.end());
            Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
            lu.compute(J);
            if (lu.info() != Eigen::Success) {
                rep.diagnostics = "sparse factorization failed";
                return rep;
            }
            step = lu.solve(-F);
        }
        check_finite(step, "newton step");

        // Backtracking on the residual norm.
        double alpha = 1.0;
        bool accepted = false;
        SolverState trial = s;
        const SolverState base = s;
        for (int ls = 0; ls < 12; ++ls) {
            apply_step(p, trial, base, step, alpha);
            Eigen::VectorXd Ft = system_residual(p, trial);
            check_finite(Ft, "line-search residual");
            const double merit_t = Ft.norm();
            if (merit_t < merit * (1.0 - 1e-4 * alpha) ||
                Ft.lpNorm<Eigen::Infinity>() <= cfg.residual_tol) {
                s = trial;
                F = std::move(Ft);
                merit = merit_t;
                rep.residual_norm = F.lpNorm<Eigen::Infinity>();
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        ++rep.iterations;
        if (!accepted) {
            std::ostringstream oss;
            oss << "line search stalled at residual " << rep.residual_norm
                << " (tolerance " << cfg.residual_tol
                << "; at fine grids the attainable floor scales like eps/dt^2)";
            rep.diagnostics = oss.str();
            return rep;
        }
    }
    rep.converged = rep.residual_norm <= cfg.residual_tol;
    if (!rep.converged && rep.diagnostics.empty()) {
        rep.diagnostics = "newton did not reach tolerance within max_iters";
    }
    return rep;
}

// Picard relaxation. Unconstrained: freezing C~ leaves a linear, mode-diagonal
// two-point BVP per sweep. Constrained: the frozen-C~ problem is still
// nonlinear through the multipliers, so each sweep runs the narrow-band Newton
// on it; the outer loop is the fixed-point iteration on C~.
IterationReport picard_solve(const Problem& p, SolverState& s, const SolveConfig& cfg) {
    const double dt = p.dt();
    IterationReport rep;
    Eigen::VectorXd F = system_residual(p, s);
    check_finite(F, "initial residual");
    rep.residual_norm = F.lpNorm<Eigen::Infinity>();

    if (p.variant == SolveVariant::Constrained) {
        for (int it = 0; it < cfg.max_iters && rep.residual_norm > cfg.residual_tol; ++it) {
            const Eigen::MatrixXcd ctil =
                p.coup.nu != 0.0 ? c_tilde_all(p, s.c, p.band)
                                 : Eigen::MatrixXcd::Zero(p.N, p.M);
            Problem frozen = p;
            frozen.frozen_ctilde = &ctil;
            SolveConfig inner = cfg;
            inner.max_iters = 30;
            newton_solve(frozen, s, inner);
            F = system_residual(p, s);
            check_finite(F, "picard residual");
            rep.residual_norm = F.lpNorm<Eigen::Infinity>();
            ++rep.iterations;
        }
        rep.converged = rep.residual_norm <= cfg.residual_tol;
        if (!rep.converged) rep.diagnostics = "picard did not reach tolerance within max_iters";
        return rep;
    }

    // One complex N x N factorization per mode, reused across sweeps.
    std::vector<Eigen::PartialPivLU<Eigen::MatrixXcd>> factors(p.M);
    auto build_matrix = [&](int m) {
        Eigen::MatrixXcd L = Eigen::MatrixXcd::Zero(p.N, p.N);
        L(0, 0) = 1.0;
        L(1, 0) = -3.0 / (2.0 * dt);
        L(1, 1) = 4.0 / (2.0 * dt);
        L(1, 2) = -1.0 / (2.0 * dt);
        const cd om(0.0, p.en[m] / (p.coup.hbar * dt));
        for (int q = 2; q < p.N - 1; ++q) {
            L(q, q + 1) = cd(1.0 / (dt * dt), 0.0) - om;
            L(q, q - 1) = cd(1.0 / (dt * dt), 0.0) + om;
            L(q, q) = -2.0 / (dt * dt) - (p.coup.mu / p.coup.B) * p.dlt[m] * p.dlt[m];
        }
        const double sc = 2.0 / (p.coup.B * dt);
        L(p.N - 1, p.N - 1) = sc * (p.coup.B / dt + 0.5 * dt * p.coup.mu * p.dlt[m] * p.dlt[m]);
        L(p.N - 1, p.N - 2) = cd(-sc * p.coup.B / dt, -sc * p.coup.B * p.en[m] / p.coup.hbar);
        return L;
    };
    for (int m = 0; m < p.M; ++m) factors[m].compute(build_matrix(m));

    const double gain = p.coup.nonlocal_gain();
    for (int it = 0; it < cfg.max_iters && rep.residual_norm > cfg.residual_tol; ++it) {
        const Eigen::MatrixXcd ctil = p.coup.nu != 0.0
                                          ? c_tilde_all(p, s.c, p.band)
                                          : Eigen::MatrixXcd::Zero(p.N, p.M);
        Eigen::MatrixXcd next(p.N, p.M);
        for (int m = 0; m < p.M; ++m) {
            Eigen::VectorXcd rhs = Eigen::VectorXcd::Zero(p.N);
            rhs[0] = p.initial_c[m];
            for (int q = 2; q < p.N - 1; ++q) rhs[q] = gain * ctil(q, m);
            rhs[p.N - 1] =
                -(2.0 / (p.coup.B * dt)) * 0.5 * dt * 2.0 * p.coup.nu * ctil(p.N - 1, m);
            next.col(m) = factors[m].solve(rhs);
        }
        s.c = next;
        s.c.row(0) = p.initial_c.transpose();
        if (!s.c.allFinite()) throw NumericalBlowupError("picard iterate went non-finite");
        F = system_residual(p, s);
        check_finite(F, "picard residual");
        rep.residual_norm = F.lpNorm<Eigen::Infinity>();
        ++rep.iterations;
    }
    rep.converged = rep.residual_norm <= cfg.residual_tol;
    if (!rep.converged) {
        rep.diagnostics = "picard did not reach tolerance within max_iters";
    }
    return rep;
}

} // namespace

Eigen::VectorXcd c_tilde(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                         const Couplings& coup, int node) {
    check_shapes(traj, spec);
    if (node < 0 || node >= traj.n_nodes()) throw ArgumentError("node out of range");
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    return c_tilde_node(p, traj.values, node, p.band);
}

Eigen::MatrixXcd c_tilde_field(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                               const Couplings& coup) {
    check_shapes(traj, spec);
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    return c_tilde_all(p, traj.values, p.band);
}

Eigen::VectorXcd c_tilde_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                               const Couplings& coup, int node) {
    check_shapes(traj, spec);
    if (node < 0 || node >= traj.n_nodes()) throw ArgumentError("node out of range");
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    // Brute force: visit every node pair, no support short-circuit.
    return c_tilde_node(p, traj.values, node, p.N - 1, nullptr, false);
}

Eigen::MatrixXcd c_tilde_field_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                     const Couplings& coup) {
    check_shapes(traj, spec);
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    Eigen::MatrixXcd out(p.N, p.M);
    for (int q = 0; q < p.N; ++q) {
        out.row(q) = c_tilde_node(p, traj.values, q, p.N - 1, nullptr, false).transpose();
    }
    return out;
}

Eigen::MatrixXcd ide_residual_unconstrained(const CoefficientTrajectory& traj,
                                            const ModeSpectrum& spec, const Couplings& coup) {
    check_shapes(traj, spec);
    if (traj.n_nodes() < 3) throw ArgumentError("residual needs at least 3 nodes");
    coup.validate();
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    const Eigen::MatrixXcd ctil = coup.nu != 0.0 ? c_tilde_all(p, traj.values, p.band)
                                                 : Eigen::MatrixXcd::Zero(p.N, p.M);
    return interior_residual(p, traj.values, ctil, nullptr);
}

double lambda_of_t(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                   const Couplings& coup, int node, double* imag_residue_out) {
    check_shapes(traj, spec);
    if (node < 0 || node >= traj.n_nodes()) throw ArgumentError("node out of range");
    coup.validate();
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Constrained, {});
    const Eigen::MatrixXcd cdot = derivative_field(p, traj.values);
    const Eigen::VectorXcd ctil = c_tilde_node(p, traj.values, node, p.band);

    double s = 0.0;
    cd pairing(0.0, 0.0);
    for (int m = 0; m < p.M; ++m) {
        const cd cj = traj.values(node, m);
        const cd dj = cdot(node, m);
        s += std::norm(dj);
        s += (coup.mu / coup.B) * p.dlt[m] * p.dlt[m] * std::norm(cj);
        s -= (2.0 * p.en[m] / coup.hbar) * std::imag(std::conj(cj) * dj);
        pairing += std::conj(cj) * ctil(m);
    }
    s += coup.nonlocal_gain() * pairing.real();
    if (imag_residue_out) *imag_residue_out = std::abs(pairing.imag());
    // lambda_hat = 2 T lambda / B = -s
    return -s * coup.B / (2.0 * traj.grid.duration());
}

Eigen::MatrixXcd ide_residual_constrained(const CoefficientTrajectory& traj,
                                          const ModeSpectrum& spec, const Couplings& coup) {
    check_shapes(traj, spec);
    coup.validate();
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Constrained, {});
    const Eigen::MatrixXcd ctil = c_tilde_all(p, traj.values, p.band);
    const Eigen::VectorXd lh =
        lambda_hat_field(p, traj.values, derivative_field(p, traj.values), ctil);
    return interior_residual(p, traj.values, ctil, &lh);
}

Eigen::VectorXcd nbc_residual(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                              const Couplings& coup) {
    check_shapes(traj, spec);
    coup.validate();
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    const int q = p.N - 1;
    Eigen::MatrixXcd ctil = Eigen::MatrixXcd::Zero(p.N, p.M);
    if (coup.nu != 0.0) ctil.row(q) = c_tilde_node(p, traj.values, q, p.band).transpose();
    return endpoint_gradient(p, traj.values, ctil, true);
}

Eigen::VectorXcd initial_endpoint_gradient(const CoefficientTrajectory& traj,
                                           const ModeSpectrum& spec, const Couplings& coup) {
    check_shapes(traj, spec);
    coup.validate();
    Problem p = make_problem(spec, coup, traj.grid, SolveVariant::Unconstrained, {});
    Eigen::MatrixXcd ctil = Eigen::MatrixXcd::Zero(p.N, p.M);
    if (coup.nu != 0.0) ctil.row(0) = c_tilde_node(p, traj.values, 0, p.band).transpose();
    return endpoint_gradient(p, traj.values, ctil, false);
}

void SolveConfig::validate() const {
    if (max_iters < 1) throw ConfigError("max_iters must be at least 1");
    if (!(residual_tol > 0.0)) throw ConfigError("residual_tol must be positive");
    if (continuation_steps_nu < 1) throw ConfigError("continuation_steps_nu must be >= 1");
}

SolveResult solve_bvp(const Eigen::VectorXcd& initial_c, const ModeSpectrum& spec,
                      const Couplings& coup, const TimeGrid& grid, const SolveConfig& config) {
    spec.validate();
    coup.validate();
    grid.validate();
    config.validate();
    if (initial_c.size() != spec.num_modes()) {
        throw ArgumentError("initial coefficient vector does not match the spectrum");
    }
    if (std::abs(initial_c.squaredNorm() - 1.0) > 1e-10) {
        throw ArgumentError("initial coefficients must be normalized to 1 within 1e-10");
    }

    SolveResult result;
    result.trajectory.grid = grid;
    SolverState state;
    state.c.resize(grid.n_nodes, spec.num_modes());
    Problem base = make_problem(spec, coup, grid, SolveVariant::Unconstrained, initial_c);
    for (int q = 0; q < grid.n_nodes; ++q) {
        for (int m = 0; m < spec.num_modes(); ++m) {
            if (config.initial_guess == InitialGuess::PhaseRotating) {
                const double theta = 2.0 * base.en[m] * (grid.t(q) - grid.t_i) / coup.hbar;
                state.c(q, m) = initial_c[m] * std::polar(1.0, theta);
            } else {
                state.c(q, m) = initial_c[m];
            }
        }
    }

    const bool trivial_couplings = coup.mu == 0.0 && coup.nu == 0.0;
    const int steps = trivial_couplings ? 1 : config.continuation_steps_nu;
    IterationReport last;
    for (int k = 1; k <= steps; ++k) {
        Couplings scaled = coup;
        const double frac = static_cast<double>(k) / steps;
        scaled.mu = coup.mu * frac;
        scaled.nu = coup.nu * frac;
        const auto run = [&](SolveVariant variant) {
            Problem p = make_problem(spec, scaled, grid, variant, initial_c);
            if (variant == SolveVariant::Constrained &&
                state.lam.size() != p.n_multipliers()) {
                // Seed the multipliers from the eliminated closed form.
                const Eigen::MatrixXcd ctil = c_tilde_all(p, state.c, p.band);
                const Eigen::VectorXd lh =
                    lambda_hat_field(p, state.c, derivative_field(p, state.c), ctil);
                state.lam.resize(p.n_multipliers());
                for (int q = 2; q < p.N - 1; ++q) state.lam[q - 2] = lh[q];
                state.lam[p.N - 3] = 0.0; // endpoint multiplier, different scale
            }
            return config.strategy == SolveStrategy::StationarityNewton
                       ? newton_solve(p, state, config)
                       : picard_solve(p, state, config);
        };
        if (config.variant == SolveVariant::Constrained) {
            // The reaction rows are violently nonlinear away from the solution
            // manifold; the unconstrained solution is a good warm start.
            state.lam.resize(0);
            last = run(SolveVariant::Unconstrained);
            result.iterations += last.iterations;
            if (last.converged) {
                last = run(SolveVariant::Constrained);
                result.iterations += last.iterations;
            }
        } else {
            last = run(config.variant);
            result.iterations += last.iterations;
        }
        if (!last.converged) {
            std::ostringstream oss;
            oss << "continuation step " << k << "/" << steps << ": " << last.diagnostics;
            result.diagnostics = oss.str();
            break;
        }
    }

    result.trajectory.values = std::move(state.c);
    result.converged = last.converged;
    result.final_residual_norm = last.residual_norm;

    const Eigen::VectorXcd nbc = nbc_residual(result.trajectory, spec, coup);
    result.nbc_residual = nbc.cwiseAbs().maxCoeff();
    const Eigen::MatrixXcd cdot = time_derivative(result.trajectory);
    result.cdot_tf_norm = cdot.row(grid.n_nodes - 1).cwiseAbs().maxCoeff();
    if (config.variant == SolveVariant::Constrained) {
        result.lambda_trace.resize(grid.n_nodes);
        for (int q = 0; q < grid.n_nodes; ++q) {
            result.lambda_trace[q] = lambda_of_t(result.trajectory, spec, coup, q);
        }
    }
    return result;
}

const char* solve_variant_name(SolveVariant v) {
    return v == SolveVariant::Unconstrained ? "unconstrained" : "constrained";
}
const char* solve_strategy_name(SolveStrategy s) {
    return s == SolveStrategy::StationarityNewton ? "stationarity_newton" : "picard_relaxation";
}
const char* initial_guess_name(InitialGuess g) {
    return g == InitialGuess::ConstantHold ? "constant_hold" : "phase_rotating";
}

SolveVariant solve_variant_from_name(const std::string& name) {
    if (name == "unconstrained") return SolveVariant::Unconstrained;
    if (name == "constrained") return SolveVariant::Constrained;
    throw ConfigError("unknown solve variant '" + name + "'");
}
SolveStrategy solve_strategy_from_name(const std::string& name) {
    if (name == "stationarity_newton") return SolveStrategy::StationarityNewton;
    if (name == "picard_relaxation") return SolveStrategy::PicardRelaxation;
    throw ConfigError("unknown solve strategy '" + name + "'");
}
InitialGuess initial_guess_from_name(const std::string& name) {
    if (name == "constant_hold") return InitialGuess::ConstantHold;
    if (name == "phase_rotating") return InitialGuess::PhaseRotating;
    throw ConfigError("unknown initial guess '" + name + "'");
}

} // namespace qcollapse
