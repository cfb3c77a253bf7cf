#include "qcollapse/ensemble.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <thread>

#include <boost/math/distributions/chi_squared.hpp>

#include "qcollapse/kernel.hpp"

namespace qcollapse {

std::uint64_t SplitMixStream::next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double SplitMixStream::next_unit() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double SplitMixStream::next_symmetric() { return 2.0 * next_unit() - 1.0; }

std::uint64_t SplitMixStream::mix(std::uint64_t seed, std::uint64_t index) {
    SplitMixStream s(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
    s.next_u64();
    return s.next_u64();
}

RealizationInputs realization_inputs(const EnsembleInstance& instance,
                                     const HiddenVariableDistribution& distribution,
                                     std::uint64_t seed, int index) {
    SplitMixStream rng(SplitMixStream::mix(seed, static_cast<std::uint64_t>(index)));
    RealizationInputs in;
    in.T = distribution.T_center + distribution.T_halfwidth * rng.next_symmetric();
    in.initial_c = instance.initial_c;
    if (distribution.initial_phase_jitter > 0.0) {
        for (int m = 0; m < in.initial_c.size(); ++m) {
            const double theta = distribution.initial_phase_jitter * rng.next_symmetric();
            in.initial_c[m] *= std::polar(1.0, theta);
        }
    }
    return in;
}

void HiddenVariableDistribution::validate() const {
    if (law != "uniform") {
        throw ConfigError("hidden variable law '" + law + "' not supported (uniform only)");
    }
    if (!(T_center - T_halfwidth > 0.0)) {
        throw ConfigError("duration window must stay positive: need T_center - T_halfwidth > 0");
    }
    if (T_halfwidth < 0.0) throw ConfigError("T_halfwidth must be non-negative");
    if (initial_phase_jitter < 0.0) throw ConfigError("initial_phase_jitter must be >= 0");
}

double moving_average(const CoefficientTrajectory& traj, const Couplings& coup, int node,
                      int mode) {
    if (node < 0 || node >= traj.n_nodes() || mode < 0 || mode >= traj.n_modes()) {
        throw ArgumentError("moving_average index out of range");
    }
    const TimeGrid& g = traj.grid;
    const int b = support_halfwidth(coup.kernel, g);
    const int lo = std::max(0, node - b);
    const int hi = std::min(g.n_nodes - 1, node + b);
    const double tq = g.t(node);
    double acc = 0.0;
    for (int p = lo; p <= hi; ++p) {
        const double f = kernel_eval(coup.kernel, tq - g.t(p));
        if (f == 0.0) continue;
        acc += g.weight(p) * f * std::norm(traj.values(p, mode));
    }
    return acc;
}

DriftProbe drift_probe(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                       const Couplings& coup) {
    if (traj.n_modes() != spec.num_modes()) {
        throw ArgumentError("spectrum and trajectory disagree on mode count");
    }
    const TimeGrid& g = traj.grid;
    const int J = spec.num_system_modes();
    const Eigen::MatrixXcd cdot = time_derivative(traj);
    const double gain = coup.nonlocal_gain();

    DriftProbe out;
    out.p_of_t = Eigen::MatrixXd::Zero(g.n_nodes, J);
    out.bound = Eigen::VectorXd::Zero(J);
    for (int n = 0; n < g.n_nodes; ++n) {
        for (int j = 0; j < J; ++j) {
            double s = 0.0;
            for (int k = 0; k < spec.num_pointer_modes(); ++k) {
                const int m = spec.flat(j, k);
                const double d2 = delta(spec, j, k) * delta(spec, j, k);
                s += std::norm(cdot(n, m));
                s += (coup.mu / coup.B) * d2 * std::norm(traj.values(n, m));
                s += gain * d2 * moving_average(traj, coup, n, m) * std::norm(traj.values(n, m));
            }
            out.p_of_t(n, j) = s;
        }
    }
    for (int j = 0; j < J; ++j) {
        double integral = 0.0;
        for (int n = 0; n < g.n_nodes; ++n) integral += g.weight(n) * std::abs(out.p_of_t(n, j));
        out.bound[j] = 2.0 * g.duration() * integral;
    }
    return out;
}

namespace {

double phase_term_time_average(const CoefficientTrajectory& traj, const ModeSpectrum& spec,
                               const Couplings& coup) {
    const TimeGrid& g = traj.grid;
    const Eigen::MatrixXcd cdot = time_derivative(traj);
    std::vector<double> en(spec.num_modes());
    for (int j = 0; j < spec.num_system_modes(); ++j)
        for (int k = 0; k < spec.num_pointer_modes(); ++k)
            en[spec.flat(j, k)] = combined_energy(spec, j, k);
    double acc = 0.0;
    for (int n = 0; n < g.n_nodes; ++n) {
        double node = 0.0;
        for (int m = 0; m < traj.n_modes(); ++m) {
            // Re{(2i/hbar) E C* Cdot} = -(2E/hbar) Im{C* Cdot}
            node -= (2.0 * en[m] / coup.hbar) *
                    std::imag(std::conj(traj.values(n, m)) * cdot(n, m));
        }
        acc += g.weight(n) * node;
    }
    return acc / g.duration();
}

} // namespace

double phase_term_average_check(const std::vector<CoefficientTrajectory>& ensemble,
                                const ModeSpectrum& spec, const Couplings& coup) {
    if (ensemble.size() < 2) {
        throw ArgumentError("phase term average needs at least 2 realizations");
    }
    double acc = 0.0;
    for (const auto& traj : ensemble) acc += phase_term_time_average(traj, spec, coup);
    return acc / static_cast<double>(ensemble.size());
}

EnsembleReport run_ensemble(const EnsembleInstance& instance,
                            const HiddenVariableDistribution& distribution, int n,
                            std::uint64_t seed, int threads) {
    if (n < 1) throw ArgumentError("ensemble needs n >= 1 realizations");
    distribution.validate();
    instance.spec.validate();
    instance.couplings.validate();
    if (instance.n_nodes < 3) throw ConfigError("ensemble grid needs at least 3 nodes");

    const int J = instance.spec.num_system_modes();
    const int M = instance.spec.num_modes();
    if (instance.initial_c.size() != M) {
        throw ConfigError("initial coefficients do not match the spectrum");
    }

    struct Slot {
        RealizationOutcome outcome;
        CoefficientTrajectory trajectory;
        Eigen::VectorXd drift_bound;
        bool blowup = false;
    };
    std::vector<Slot> slots(n);

    auto run_one = [&](int r) {
        Slot& slot = slots[r];
        const RealizationInputs in = realization_inputs(instance, distribution, seed, r);
        slot.outcome.T = in.T;
        TimeGrid grid{instance.t_i, instance.t_i + in.T, instance.n_nodes};
        try {
            SolveResult res =
                solve_bvp(in.initial_c, instance.spec, instance.couplings, grid, instance.solve);
            slot.outcome.converged = res.converged;
            slot.outcome.iterations = res.iterations;
            slot.trajectory = std::move(res.trajectory);
            slot.outcome.final_weight = total_weight(slot.trajectory, grid.n_nodes - 1);
            const CollapseMetrics cm =
                collapse_metrics(slot.trajectory, instance.spec, instance.collapse);
            slot.outcome.purity = cm.purity;
            slot.outcome.agreement_residual = cm.agreement_residual;
            slot.outcome.dominant_j = cm.dominant_j;
            slot.outcome.collapsed = res.converged && cm.collapsed;
            if (res.converged) {
                slot.drift_bound = drift_probe(slot.trajectory, instance.spec,
                                               instance.couplings).bound;
            }
        } catch (const NumericalBlowupError&) {
            slot.blowup = true;
            slot.outcome.converged = false;
        } catch (const DegenerateStateError&) {
            slot.outcome.collapsed = false;
        }
    };

    const int pool = std::max(1, std::min(threads, n));
    if (pool == 1) {
        for (int r = 0; r < n; ++r) run_one(r);
    } else {
        std::atomic<int> next(0);
        std::vector<std::thread> workers;
        workers.reserve(pool);
        for (int w = 0; w < pool; ++w) {
            workers.emplace_back([&]() {
                for (int r = next.fetch_add(1); r < n; r = next.fetch_add(1)) run_one(r);
            });
        }
        for (auto& w : workers) w.join();
    }

    // Aggregation in realization-index order keeps reports deterministic
    // regardless of the pool schedule.
    EnsembleReport report;
    report.n_realizations = n;
    report.per_realization.reserve(n);
    std::vector<int> counts(J, 0);
    std::vector<CoefficientTrajectory> converged_trajs;
    report.drift_bound_max.assign(J, 0.0);
    for (int r = 0; r < n; ++r) {
        const Slot& slot = slots[r];
        report.per_realization.push_back(slot.outcome);
        if (!slot.outcome.converged) {
            ++report.n_diverged;
            continue;
        }
        converged_trajs.push_back(slot.trajectory);
        for (int j = 0; j < J; ++j) {
            report.drift_bound_max[j] = std::max(report.drift_bound_max[j], slot.drift_bound[j]);
        }
        if (slot.outcome.collapsed) {
            ++report.n_collapsed;
            ++counts[slot.outcome.dominant_j];
        } else {
            ++report.n_uncollapsed;
        }
    }
    if (report.n_diverged == n) {
        throw EnsembleError("all " + std::to_string(n) +
                            " realizations failed to converge; see per-realization diagnostics");
    }

    // Preparation weights are identical across realizations by construction.
    {
        CoefficientTrajectory prep;
        prep.grid = TimeGrid{instance.t_i, instance.t_i + distribution.T_center,
                             instance.n_nodes};
        prep.values = Eigen::MatrixXcd::Zero(instance.n_nodes, M);
        prep.values.row(0) = instance.initial_c.transpose();
        Eigen::VectorXd p0 = outcome_weights(prep, instance.spec, 0);
        const double tot = p0.sum();
        report.initial_weights.resize(J);
        for (int j = 0; j < J; ++j) report.initial_weights[j] = p0[j] / tot;
    }

    if (report.n_collapsed > 0) {
        report.frequencies.resize(J);
        for (int j = 0; j < J; ++j) {
            report.frequencies[j] =
                static_cast<double>(counts[j]) / static_cast<double>(report.n_collapsed);
        }
        double dev = 0.0;
        for (int j = 0; j < J; ++j) {
            dev = std::max(dev, std::abs(report.frequencies[j] - report.initial_weights[j]));
        }
        report.max_abs_deviation = dev;

        double chi2 = 0.0;
        int classes = 0;
        bool infeasible = false;
        for (int j = 0; j < J; ++j) {
            const double expected = report.n_collapsed * report.initial_weights[j];
            if (expected > 0.0) {
                ++classes;
                const double d = counts[j] - expected;
                chi2 += d * d / expected;
            } else if (counts[j] > 0) {
                infeasible = true; // outcome landed in a zero-weight class
            }
        }
        if (!infeasible) {
            report.chi_square = chi2;
            const int dof = classes - 1;
            if (dof >= 1) {
                boost::math::chi_squared dist(dof);
                report.chi_square_p_value = boost::math::cdf(boost::math::complement(dist, chi2));
            } else {
                report.chi_square_p_value = 1.0;
            }
        }
    }

    if (converged_trajs.size() >= 2) {
        report.phase_term_average =
            phase_term_average_check(converged_trajs, instance.spec, instance.couplings);
    } else if (converged_trajs.size() == 1) {
        report.phase_term_average =
            phase_term_time_average(converged_trajs[0], instance.spec, instance.couplings);
    }

    const double gap = min_energy_gap(instance.spec);
    report.window_energy_ratio =
        gap > 0.0 ? 2.0 * distribution.T_halfwidth * gap / instance.couplings.hbar : -1.0;
    return report;
}

} // namespace qcollapse
