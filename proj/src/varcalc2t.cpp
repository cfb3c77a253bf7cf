#include "qcollapse/varcalc2t.hpp"

#include <cmath>
#include <sstream>

#include "qcollapse/ensemble.hpp"
#include "qcollapse/errors.hpp"

namespace qcollapse {

bool TwoTimeFunctional::check_symmetry(int samples, double tol, std::uint64_t seed) const {
    SplitMixStream rng(seed);
    for (int i = 0; i < samples; ++i) {
        const double t1 = rng.next_symmetric(), t2 = rng.next_symmetric();
        const double a = rng.next_symmetric(), b = rng.next_symmetric();
        const double c = rng.next_symmetric(), d = rng.next_symmetric();
        const double lhs = F(t1, t2, a, b, c, d);
        const double rhs = F(t2, t1, c, d, a, b);
        if (std::abs(lhs - rhs) > tol * std::max(1.0, std::abs(lhs))) return false;
    }
    return true;
}

Eigen::VectorXd scalar_time_derivative(const TimeGrid& grid, const Eigen::VectorXd& phi) {
    const int n = grid.n_nodes;
    if (phi.size() != n) throw ArgumentError("phi does not match the grid");
    if (n < 3) throw ArgumentError("derivative needs at least 3 nodes");
    const double dt = grid.dt();
    Eigen::VectorXd d(n);
    d[0] = (-3.0 * phi[0] + 4.0 * phi[1] - phi[2]) / (2.0 * dt);
    for (int q = 1; q < n - 1; ++q) d[q] = (phi[q + 1] - phi[q - 1]) / (2.0 * dt);
    d[n - 1] = (3.0 * phi[n - 1] - 4.0 * phi[n - 2] + phi[n - 3]) / (2.0 * dt);
    return d;
}

namespace {

void check_interior(const TimeGrid& grid, int node) {
    if (node < 1 || node > grid.n_nodes - 2) {
        throw ArgumentError("necessary condition is defined at interior nodes only");
    }
}

// d/dt1 of a nodal sequence g(s) at interior node q. Central where both
// neighbours carry central derivative stencils; one node in from the boundary
// an inward-shifted second-order stencil keeps the truncation error uniform.
template <typename G>
double ddt1_at(const TimeGrid& grid, int q, G&& g) {
    const double dt = grid.dt();
    const int n = grid.n_nodes;
    if (q >= 2 && q <= n - 3) return (g(q + 1) - g(q - 1)) / (2.0 * dt);
    if (q == 1 && n >= 5) return (-3.0 * g(1) + 4.0 * g(2) - g(3)) / (2.0 * dt);
    if (q == n - 2 && n >= 5) return (3.0 * g(n - 2) - 4.0 * g(n - 3) + g(n - 4)) / (2.0 * dt);
    return (g(q + 1) - g(q - 1)) / (2.0 * dt);
}

} // namespace

double necessary_condition_residual(const TwoTimeFunctional& func, const TimeGrid& grid,
                                    const Eigen::VectorXd& phi, int node) {
    check_interior(grid, node);
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    double acc = 0.0;
    for (int p = 0; p < grid.n_nodes; ++p) {
        const double tp = grid.t(p);
        const double direct =
            func.dF_dphi1(grid.t(node), tp, phi[node], pd[node], phi[p], pd[p]);
        const double ddt = ddt1_at(grid, node, [&](int s) {
            return func.dF_dphidot1(grid.t(s), tp, phi[s], pd[s], phi[p], pd[p]);
        });
        acc += grid.weight(p) * (direct - ddt);
    }
    return acc;
}

double necessary_condition_residual_second(const TwoTimeFunctional& func, const TimeGrid& grid,
                                           const Eigen::VectorXd& phi, int node) {
    check_interior(grid, node);
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    double acc = 0.0;
    for (int p = 0; p < grid.n_nodes; ++p) {
        const double tp = grid.t(p);
        const double direct =
            func.dF_dphi2(tp, grid.t(node), phi[p], pd[p], phi[node], pd[node]);
        const double ddt = ddt1_at(grid, node, [&](int s) {
            return func.dF_dphidot2(tp, grid.t(s), phi[p], pd[p], phi[s], pd[s]);
        });
        acc += grid.weight(p) * (direct - ddt);
    }
    return acc;
}

double nbc_value(const TwoTimeFunctional& func, const TimeGrid& grid,
                 const Eigen::VectorXd& phi) {
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    const int last = grid.n_nodes - 1;
    double acc = 0.0;
    for (int p = 0; p < grid.n_nodes; ++p) {
        acc += grid.weight(p) * func.dF_dphidot1(grid.t(last), grid.t(p), phi[last], pd[last],
                                                 phi[p], pd[p]);
    }
    return acc;
}

double lagrange_condition_residual(const TwoTimeFunctional& func, const TimeGrid& grid,
                                   const Eigen::VectorXd& phi, const Eigen::VectorXd& lambda,
                                   const ConstraintFn& constraint, int node) {
    check_interior(grid, node);
    if (lambda.size() != grid.n_nodes) throw ArgumentError("lambda does not match the grid");
    const double span = grid.duration();
    return span * lambda[node] * constraint.dK_dphi(grid.t(node), phi[node]) +
           necessary_condition_residual(func, grid, phi, node);
}

double single_time_euler_residual(const SingleTimeIntegrand& g, const TimeGrid& grid,
                                  const Eigen::VectorXd& phi, int node) {
    check_interior(grid, node);
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    const double direct = g.dG_dphi(grid.t(node), phi[node], pd[node]);
    const double ddt = ddt1_at(grid, node,
                               [&](int s) { return g.dG_dphidot(grid.t(s), phi[s], pd[s]); });
    return direct - ddt;
}

double two_time_action_value(const TwoTimeFunctional& func, const TimeGrid& grid,
                             const Eigen::VectorXd& phi) {
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    double acc = 0.0;
    for (int a = 0; a < grid.n_nodes; ++a) {
        double row = 0.0;
        for (int b = 0; b < grid.n_nodes; ++b) {
            row += grid.weight(b) *
                   func.F(grid.t(a), grid.t(b), phi[a], pd[a], phi[b], pd[b]);
        }
        acc += grid.weight(a) * row;
    }
    return acc;
}

bool reduction_check_declined(double integral_h, double span) {
    return std::abs(integral_h) < 1e-10 * span;
}

// ---- battery ----------------------------------------------------------------

namespace {

// Variant of the necessary-condition residual with an optional sign flip on
// the d/dt1 term; the battery's negative control.
double ncr_signed(const TwoTimeFunctional& func, const TimeGrid& grid,
                  const Eigen::VectorXd& phi, int node, double sign) {
    const Eigen::VectorXd pd = scalar_time_derivative(grid, phi);
    double acc = 0.0;
    for (int p = 0; p < grid.n_nodes; ++p) {
        const double tp = grid.t(p);
        const double direct =
            func.dF_dphi1(grid.t(node), tp, phi[node], pd[node], phi[p], pd[p]);
        const double ddt = ddt1_at(grid, node, [&](int s) {
            return func.dF_dphidot1(grid.t(s), tp, phi[s], pd[s], phi[p], pd[p]);
        });
        acc += grid.weight(p) * (direct + sign * ddt);
    }
    return acc;
}

Eigen::VectorXd sampled(const TimeGrid& grid, const std::function<double(double)>& f) {
    Eigen::VectorXd v(grid.n_nodes);
    for (int q = 0; q < grid.n_nodes; ++q) v[q] = f(grid.t(q));
    return v;
}

constexpr double kOmega = 2.2;

// G = (phidot^2 - omega^2 phi^2)/2, the harmonic single-time integrand.
SingleTimeIntegrand harmonic_integrand() {
    SingleTimeIntegrand g;
    g.G = [](double, double p, double pd) { return 0.5 * (pd * pd - kOmega * kOmega * p * p); };
    g.dG_dphi = [](double, double p, double) { return -kOmega * kOmega * p; };
    g.dG_dphidot = [](double, double, double pd) { return pd; };
    return g;
}

// F = G(t1) * H(t2) with H a strictly positive time profile.
TwoTimeFunctional factored_functional() {
    auto H = [](double t) { return 1.0 + 0.5 * std::cos(M_PI * t); };
    TwoTimeFunctional f;
    f.F = [H](double, double t2, double p1, double pd1, double, double) {
        return 0.5 * (pd1 * pd1 - kOmega * kOmega * p1 * p1) * H(t2);
    };
    f.dF_dphi1 = [H](double, double t2, double p1, double, double, double) {
        return -kOmega * kOmega * p1 * H(t2);
    };
    f.dF_dphidot1 = [H](double, double t2, double, double pd1, double, double) {
        return pd1 * H(t2);
    };
    f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot2 = [](double, double, double, double, double, double) { return 0.0; };
    f.symmetric = false;
    return f;
}

// Constant-window version used for the free-end solve: H = 1.
TwoTimeFunctional harmonic_window_functional() {
    TwoTimeFunctional f;
    f.F = [](double, double, double p1, double pd1, double, double) {
        return 0.5 * (pd1 * pd1 - kOmega * kOmega * p1 * p1);
    };
    f.dF_dphi1 = [](double, double, double p1, double, double, double) {
        return -kOmega * kOmega * p1;
    };
    f.dF_dphidot1 = [](double, double, double, double pd1, double, double) { return pd1; };
    f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot2 = [](double, double, double, double, double, double) { return 0.0; };
    f.symmetric = false;
    return f;
}

// Free-end stationary solution of the harmonic window problem with phi(a)=1:
// phi = cos(w(t-a)) + tan(w(b-a)) sin(w(t-a)), which has phidot(b) = 0.
double harmonic_exact(double t, double a, double b) {
    return std::cos(kOmega * (t - a)) + std::tan(kOmega * (b - a)) * std::sin(kOmega * (t - a));
}

// Dense linear solve of the discrete conditions: Dirichlet at a, necessary
// condition at interior nodes, NBC at b. All residual maps are linear in phi
// for quadratic F, so columns come from unit vectors.
Eigen::VectorXd solve_free_end(const TwoTimeFunctional& func, const TimeGrid& grid,
                               double phi_a) {
    const int n = grid.n_nodes;
    auto apply = [&](const Eigen::VectorXd& phi) {
        Eigen::VectorXd r(n);
        r[0] = phi[0];
        for (int q = 1; q <= n - 2; ++q) r[q] = necessary_condition_residual(func, grid, phi, q);
        r[n - 1] = nbc_value(func, grid, phi);
        return r;
    };
    Eigen::MatrixXd A(n, n);
    Eigen::VectorXd unit = Eigen::VectorXd::Zero(n);
    for (int c = 0; c < n; ++c) {
        unit[c] = 1.0;
        A.col(c) = apply(unit);
        unit[c] = 0.0;
    }
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n);
    rhs[0] = phi_a;
    return Eigen::PartialPivLU<Eigen::MatrixXd>(A).solve(rhs);
}

} // namespace

std::vector<std::string> appendix_battery_names() {
    return {"factored_reduction", "symmetric_equivalence", "nbc_free_end",
            "lagrange_multiplier", "grid_refinement_order"};
}

std::vector<BatteryCheck> run_appendix_battery(bool inject_sign_error) {
    std::vector<BatteryCheck> checks;
    const TimeGrid grid{0.0, 1.0, 161};

    // 1. Factored F = G(t1) H(t2): the two-time residual reduces to the
    //    single-time Euler residual of G times Int H.
    {
        BatteryCheck c;
        c.name = "factored_reduction";
        c.threshold = 1e-8;
        const TwoTimeFunctional f = factored_functional();
        const SingleTimeIntegrand g = harmonic_integrand();
        auto H = [](double t) { return 1.0 + 0.5 * std::cos(M_PI * t); };
        double ih = 0.0;
        for (int q = 0; q < grid.n_nodes; ++q) ih += grid.weight(q) * H(grid.t(q));
        if (reduction_check_declined(ih, grid.duration())) {
            c.skipped = true;
            c.passed = true;
            c.detail = "Int H below resolution; reduction check declined";
            checks.push_back(c);
        } else {
            const Eigen::VectorXd phi = sampled(grid, [](double t) {
                return std::sin(3.0 * t) + 0.3 * std::cos(7.0 * t);
            });
            const double sign = inject_sign_error ? 1.0 : -1.0;
            double worst = 0.0, scale = 1.0;
            for (int q = 1; q <= grid.n_nodes - 2; ++q) {
                const double lhs = ncr_signed(f, grid, phi, q, sign);
                const double rhs = ih * single_time_euler_residual(g, grid, phi, q);
                worst = std::max(worst, std::abs(lhs - rhs));
                scale = std::max(scale, std::abs(rhs));
            }
            c.value = worst / scale;
            c.passed = c.value <= c.threshold;
            std::ostringstream oss;
            oss << "max relative defect " << c.value << ", Int H = " << ih;
            c.detail = oss.str();
            checks.push_back(c);
        }
    }

    // 2. Symmetric F: first and second necessary conditions coincide.
    {
        BatteryCheck c;
        c.name = "symmetric_equivalence";
        c.threshold = 1e-8;
        TwoTimeFunctional f;
        auto g = [](double t) { return 1.0 + t; };
        f.F = [g](double t1, double t2, double p1, double pd1, double p2, double pd2) {
            return pd1 * pd2 + g(t1) * g(t2) * p1 * p2;
        };
        f.dF_dphi1 = [g](double t1, double t2, double, double, double p2, double) {
            return g(t1) * g(t2) * p2;
        };
        f.dF_dphidot1 = [](double, double, double, double, double, double pd2) { return pd2; };
        f.dF_dphi2 = [g](double t1, double t2, double p1, double, double, double) {
            return g(t1) * g(t2) * p1;
        };
        f.dF_dphidot2 = [](double, double, double, double pd1, double, double) { return pd1; };
        f.symmetric = true;
        if (!f.check_symmetry(200, 1e-12)) {
            c.detail = "symmetry flag violated";
            checks.push_back(c);
        } else {
            const Eigen::VectorXd phi =
                sampled(grid, [](double t) { return std::exp(-t) + 0.2 * std::sin(5.0 * t); });
            double worst = 0.0, scale = 1.0;
            for (int q = 1; q <= grid.n_nodes - 2; ++q) {
                const double a = necessary_condition_residual(f, grid, phi, q);
                const double b = necessary_condition_residual_second(f, grid, phi, q);
                worst = std::max(worst, std::abs(a - b));
                scale = std::max(scale, std::abs(a));
            }
            c.value = worst / scale;
            c.passed = c.value <= c.threshold;
            c.detail = "max relative gap " + std::to_string(c.value);
            checks.push_back(c);
        }
    }

    // 3. Free-end quadratic problem: the discrete-stationary solution
    //    satisfies the NBC integral and tracks the closed-form solution.
    {
        BatteryCheck c;
        c.name = "nbc_free_end";
        c.threshold = 1e-8;
        const TimeGrid g81{0.0, 1.0, 81};
        const TwoTimeFunctional f = harmonic_window_functional();
        const Eigen::VectorXd sol = solve_free_end(f, g81, 1.0);
        c.value = std::abs(nbc_value(f, g81, sol));
        double worst = 0.0;
        for (int q = 0; q < g81.n_nodes; ++q) {
            worst = std::max(worst, std::abs(sol[q] - harmonic_exact(g81.t(q), 0.0, 1.0)));
        }
        c.passed = c.value <= c.threshold;
        std::ostringstream oss;
        oss << "nbc value " << c.value << ", max deviation from closed form " << worst;
        c.detail = oss.str();
        checks.push_back(c);
    }

    // 4. Lagrange variant with a known multiplier. Constraint pins phi to a
    //    quadratic, so every stencil is exact and lambda = phiddot closes the
    //    condition to round-off.
    {
        BatteryCheck c;
        c.name = "lagrange_multiplier";
        c.threshold = 1e-8;
        TwoTimeFunctional f;
        f.F = [](double, double, double, double pd1, double, double) { return 0.5 * pd1 * pd1; };
        f.dF_dphi1 = [](double, double, double, double, double, double) { return 0.0; };
        f.dF_dphidot1 = [](double, double, double, double pd1, double, double) { return pd1; };
        f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
        f.dF_dphidot2 = [](double, double, double, double, double, double) { return 0.0; };
        auto gfun = [](double t) { return 1.0 + 0.4 * t - 0.9 * t * t; };
        const Eigen::VectorXd phi = sampled(grid, gfun);
        const Eigen::VectorXd lambda = Eigen::VectorXd::Constant(grid.n_nodes, -1.8);
        ConstraintFn constraint;
        constraint.K = [gfun](double t, double p) { return p - gfun(t); };
        constraint.dK_dphi = [](double, double) { return 1.0; };
        double worst = 0.0;
        for (int q = 1; q <= grid.n_nodes - 2; ++q) {
            worst = std::max(
                worst, std::abs(lagrange_condition_residual(f, grid, phi, lambda, constraint, q)));
        }
        c.value = worst;
        c.passed = c.value <= c.threshold;
        c.detail = "max residual " + std::to_string(worst);
        checks.push_back(c);
    }

    // 5. Residual decay under grid refinement at the exact free-end solution.
    {
        BatteryCheck c;
        c.name = "grid_refinement_order";
        const TwoTimeFunctional f = harmonic_window_functional();
        double prev = 0.0;
        std::vector<double> orders;
        std::ostringstream oss;
        for (int n : {41, 81, 161}) {
            const TimeGrid gi{0.0, 1.0, n};
            const Eigen::VectorXd phi =
                sampled(gi, [&](double t) { return harmonic_exact(t, 0.0, 1.0); });
            double worst = 0.0;
            for (int q = 1; q <= gi.n_nodes - 2; ++q) {
                worst = std::max(worst, std::abs(necessary_condition_residual(f, gi, phi, q)));
            }
            if (prev > 0.0) orders.push_back(std::log2(prev / worst));
            prev = worst;
            oss << "N=" << n << " residual " << worst << "; ";
        }
        c.value = orders.back();
        c.threshold = 2.3; // observed order gate [1.7, 2.3]
        c.passed = true;
        for (double o : orders) c.passed = c.passed && o >= 1.7 && o <= 2.3;
        oss << "orders";
        for (double o : orders) oss << " " << o;
        c.detail = oss.str();
        checks.push_back(c);
    }

    return checks;
}

} // namespace qcollapse
