#include "qcollapse/action.hpp"

#include <algorithm>
#include <cmath>
#include <complex>

#include "qcollapse/kernel.hpp"

namespace qcollapse {

namespace {

using cd = std::complex<double>;

void check_shapes(const CoefficientTrajectory& traj, const ModeSpectrum& spec) {
    if (traj.n_modes() != spec.num_modes()) {
        throw ArgumentError("trajectory mode count does not match the spectrum");
    }
    if (traj.n_nodes() != traj.grid.n_nodes) {
        throw ArgumentError("trajectory rows do not match its grid");
    }
}

std::vector<double> flat_deltas(const ModeSpectrum& spec) {
    std::vector<double> d(spec.num_modes());
    for (int j = 0; j < spec.num_system_modes(); ++j)
        for (int k = 0; k < spec.num_pointer_modes(); ++k) d[spec.flat(j, k)] = delta(spec, j, k);
    return d;
}

std::vector<double> flat_energies(const ModeSpectrum& spec) {
    std::vector<double> e(spec.num_modes());
    for (int j = 0; j < spec.num_system_modes(); ++j)
        for (int k = 0; k < spec.num_pointer_modes(); ++k)
            e[spec.flat(j, k)] = combined_energy(spec, j, k);
    return e;
}

// Re{r(n1,n2)} of the two-time integrand, without the nu prefactor.
double r_pair_real(const Eigen::MatrixXcd& c, const std::vector<double>& dlt,
                   const std::vector<double>& en, int K, double hbar, double t1, double t2,
                   int n1, int n2) {
    const int M = static_cast<int>(c.cols());
    // a_m = C*_m(t1) C_m(t2) exp(-i E_m (t2-t1)/hbar); the integrand is
    // sum_{A,B} Delta_{jA mB} Delta_{lB kA} a_A conj(a_B).
    static thread_local std::vector<cd> a;
    a.assign(M, cd(0.0, 0.0));
    const double dt12 = t2 - t1;
    for (int m = 0; m < M; ++m) {
        a[m] = std::conj(c(n1, m)) * c(n2, m) * std::polar(1.0, -en[m] * dt12 / hbar);
    }
    cd acc(0.0, 0.0);
    for (int A = 0; A < M; ++A) {
        const int jA = A / K, kA = A % K;
        for (int B = 0; B < M; ++B) {
            const int lB = B / K, mB = B % K;
            const double pref = dlt[jA * K + mB] * dlt[lB * K + kA];
            if (pref == 0.0) continue;
            acc += pref * a[A] * std::conj(a[B]);
        }
    }
    return acc.real();
}

double eval_rI_impl(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                    const Couplings& coup, bool banded) {
    check_shapes(traj, spec);
    if (coup.nu == 0.0) return 0.0;
    const TimeGrid& g = traj.grid;
    const int N = g.n_nodes;
    const int K = spec.num_pointer_modes();
    const auto dlt = flat_deltas(spec);
    const auto en = flat_energies(spec);
    const int b = banded ? support_halfwidth(coup.kernel, g) : N - 1;

    double total = 0.0;
    for (int n1 = 0; n1 < N; ++n1) {
        const int lo = std::max(0, n1 - b);
        const int hi = std::min(N - 1, n1 + b);
        const double t1 = g.t(n1);
        double row = 0.0;
        for (int n2 = lo; n2 <= hi; ++n2) {
            const double t2 = g.t(n2);
            const double f = kernel_eval(coup.kernel, t1 - t2);
            if (f == 0.0) continue;
            row += g.weight(n2) * f *
                   r_pair_real(traj.values, dlt, en, K, coup.hbar, t1, t2, n1, n2);
        }
        total += g.weight(n1) * row;
    }
    return coup.nu * total;
}

} // namespace

double eval_s12(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                const Couplings& coup) {
    check_shapes(traj, spec);
    const TimeGrid& g = traj.grid;
    const double dt = g.dt();
    const auto en = flat_energies(spec);
    const int M = traj.n_modes();

    // Element-wise integral on the linear interpolant:
    //   per element e:  |C_{e+1}-C_e|^2/dt  -  (2E/hbar) Im{C*_e C_{e+1}}
    double total = 0.0;
    for (int e = 0; e + 1 < g.n_nodes; ++e) {
        for (int m = 0; m < M; ++m) {
            const cd c0 = traj.values(e, m);
            const cd c1 = traj.values(e + 1, m);
            total += std::norm(c1 - c0) / dt;
            total -= (2.0 * en[m] / coup.hbar) * std::imag(std::conj(c0) * c1);
        }
    }
    return coup.B * total;
}

double eval_sI(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
               const Couplings& coup) {
    check_shapes(traj, spec);
    if (coup.mu == 0.0) return 0.0;
    const TimeGrid& g = traj.grid;
    const auto dlt = flat_deltas(spec);
    double total = 0.0;
    for (int n = 0; n < g.n_nodes; ++n) {
        double node = 0.0;
        for (int m = 0; m < traj.n_modes(); ++m) {
            node += dlt[m] * dlt[m] * std::norm(traj.values(n, m));
        }
        total += g.weight(n) * node;
    }
    return coup.mu * total;
}

double eval_rI(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
               const Couplings& coup) {
    return eval_rI_impl(traj, spec, coup, true);
}

double eval_rI_dense(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                     const Couplings& coup) {
    return eval_rI_impl(traj, spec, coup, false);
}

ActionBreakdown action_breakdown(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                 const Couplings& coup) {
    ActionBreakdown out;
    out.s12 = eval_s12(traj, spec, coup);
    out.sI = eval_sI(traj, spec, coup);
    out.rI = eval_rI(traj, spec, coup);
    out.total = out.s12 + out.sI + out.rI;
    return out;
}

ActionGradient action_gradient_fd(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                                  const Couplings& coup, double h) {
    check_shapes(traj, spec);
    if (h <= 0.0) {
        const double scale = traj.values.cwiseAbs().maxCoeff();
        h = 1e-6 * std::max(1.0, scale);
    }
    const int N = traj.n_nodes();
    const int M = traj.n_modes();
    ActionGradient grad;
    grad.d_re.resize(N, M);
    grad.d_im.resize(N, M);

    CoefficientTrajectory work = traj;
    auto total = [&]() {
        return eval_s12(work, spec, coup) + eval_sI(work, spec, coup) + eval_rI(work, spec, coup);
    };
    for (int n = 0; n < N; ++n) {
        for (int m = 0; m < M; ++m) {
            const cd base = traj.values(n, m);
            work.values(n, m) = base + cd(h, 0.0);
            const double sp_re = total();
            work.values(n, m) = base - cd(h, 0.0);
            const double sm_re = total();
            work.values(n, m) = base + cd(0.0, h);
            const double sp_im = total();
            work.values(n, m) = base - cd(0.0, h);
            const double sm_im = total();
            work.values(n, m) = base;
            grad.d_re(n, m) = (sp_re - sm_re) / (2.0 * h);
            grad.d_im(n, m) = (sp_im - sm_im) / (2.0 * h);
        }
    }
    return grad;
}

} // namespace qcollapse
