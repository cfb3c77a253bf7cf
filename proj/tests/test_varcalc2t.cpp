#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qcollapse/varcalc2t.hpp"
#include "test_support.hpp"

using namespace qcollapse;

namespace {

Eigen::VectorXd sample(const TimeGrid& grid, const std::function<double(double)>& f) {
    Eigen::VectorXd v(grid.n_nodes);
    for (int q = 0; q < grid.n_nodes; ++q) v[q] = f(grid.t(q));
    return v;
}

// F = phidot(t1) phidot(t2): the action is (phi(b) - phi(a))^2, stationary
// everywhere since only endpoint values matter.
TwoTimeFunctional endpoint_only_functional() {
    TwoTimeFunctional f;
    f.F = [](double, double, double, double pd1, double, double pd2) { return pd1 * pd2; };
    f.dF_dphi1 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot1 = [](double, double, double, double, double, double pd2) { return pd2; };
    f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot2 = [](double, double, double, double pd1, double, double) { return pd1; };
    f.symmetric = true;
    return f;
}

} // namespace

TEST_CASE("endpoint-only functional has identically zero necessary condition") {
    const TimeGrid grid{0.0, 1.0, 41};
    const TwoTimeFunctional f = endpoint_only_functional();
    CHECK(f.check_symmetry(100, 1e-12));
    const Eigen::VectorXd lin = sample(grid, [](double t) { return 0.3 + 1.7 * t; });
    for (int q = 1; q <= grid.n_nodes - 2; ++q) {
        CHECK(std::abs(necessary_condition_residual(f, grid, lin, q)) < 1e-12);
    }
    // Constant phi: NBC integrand phidot(t2) vanishes.
    const Eigen::VectorXd cst = Eigen::VectorXd::Constant(grid.n_nodes, 2.0);
    CHECK(nbc_value(f, grid, cst) == 0.0);
}

TEST_CASE("factored functional reduces to the single-time Euler residual") {
    const TimeGrid grid{0.0, 1.0, 81};
    const double w = 1.9;
    auto H = [](double t) { return 2.0 - t; };
    TwoTimeFunctional f;
    f.F = [=](double, double t2, double p1, double pd1, double, double) {
        return (0.5 * pd1 * pd1 - 0.5 * w * w * p1 * p1) * H(t2);
    };
    f.dF_dphi1 = [=](double, double t2, double p1, double, double, double) {
        return -w * w * p1 * H(t2);
    };
    f.dF_dphidot1 = [=](double, double t2, double, double pd1, double, double) {
        return pd1 * H(t2);
    };
    f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot2 = [](double, double, double, double, double, double) { return 0.0; };

    SingleTimeIntegrand g;
    g.G = [=](double, double p, double pd) { return 0.5 * pd * pd - 0.5 * w * w * p * p; };
    g.dG_dphi = [=](double, double p, double) { return -w * w * p; };
    g.dG_dphidot = [](double, double, double pd) { return pd; };

    double ih = 0.0;
    for (int q = 0; q < grid.n_nodes; ++q) ih += grid.weight(q) * H(grid.t(q));

    const Eigen::VectorXd phi =
        sample(grid, [](double t) { return std::sin(2.2 * t) - 0.4 * std::cos(5.0 * t); });
    for (int q = 1; q <= grid.n_nodes - 2; ++q) {
        const double lhs = necessary_condition_residual(f, grid, phi, q);
        const double rhs = ih * single_time_euler_residual(g, grid, phi, q);
        CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(1.0, std::abs(rhs)));
    }
}

TEST_CASE("symmetric functional: both necessary conditions coincide") {
    const TimeGrid grid{0.0, 1.0, 61};
    TwoTimeFunctional f;
    f.F = [](double t1, double t2, double p1, double pd1, double p2, double pd2) {
        return pd1 * pd2 + (1.0 + t1) * (1.0 + t2) * p1 * p2;
    };
    f.dF_dphi1 = [](double t1, double t2, double, double, double p2, double) {
        return (1.0 + t1) * (1.0 + t2) * p2;
    };
    f.dF_dphidot1 = [](double, double, double, double, double, double pd2) { return pd2; };
    f.dF_dphi2 = [](double t1, double t2, double p1, double, double, double) {
        return (1.0 + t1) * (1.0 + t2) * p1;
    };
    f.dF_dphidot2 = [](double, double, double, double pd1, double, double) { return pd1; };
    f.symmetric = true;
    REQUIRE(f.check_symmetry(200, 1e-12));

    const Eigen::VectorXd phi =
        sample(grid, [](double t) { return std::exp(-0.5 * t) + 0.1 * std::sin(4.0 * t); });
    for (int q = 1; q <= grid.n_nodes - 2; ++q) {
        const double a = necessary_condition_residual(f, grid, phi, q);
        const double b = necessary_condition_residual_second(f, grid, phi, q);
        CHECK(std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)));
    }
}

TEST_CASE("nbc_value closed forms") {
    const TimeGrid grid{0.0, 1.0, 41};
    // F = phidot(t1)^2: NBC = Int dt2 2 phidot(b) = 2 (b-a) phidot(b).
    TwoTimeFunctional f;
    f.F = [](double, double, double, double pd1, double, double) { return pd1 * pd1; };
    f.dF_dphi1 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot1 = [](double, double, double, double pd1, double, double) {
        return 2.0 * pd1;
    };
    f.dF_dphi2 = [](double, double, double, double, double, double) { return 0.0; };
    f.dF_dphidot2 = [](double, double, double, double, double, double) { return 0.0; };

    // Quadratic phi keeps the endpoint derivative stencil exact.
    const Eigen::VectorXd phi = sample(grid, [](double t) { return 0.5 * t * t + 0.2 * t; });
    const double slope_b = 1.0 * 1.0 + 0.2;
    CHECK(nbc_value(f, grid, phi) == doctest::Approx(2.0 * slope_b).epsilon(1e-12));

    // Dense quadrature oracle on a non-polynomial profile.
    const Eigen::VectorXd wavy = sample(grid, [](double t) { return std::sin(1.3 * t); });
    const Eigen::VectorXd pd = scalar_time_derivative(grid, wavy);
    double oracle = 0.0;
    for (int p = 0; p < grid.n_nodes; ++p) oracle += grid.weight(p) * 2.0 * pd[grid.n_nodes - 1];
    CHECK(nbc_value(f, grid, wavy) == doctest::Approx(oracle).epsilon(1e-13));
}

TEST_CASE("lagrange condition: multiplier off reduces to the plain residual") {
    const TimeGrid grid{0.0, 1.0, 41};
    const TwoTimeFunctional f = endpoint_only_functional();
    const Eigen::VectorXd phi = sample(grid, [](double t) { return std::cos(2.0 * t); });
    const Eigen::VectorXd zero = Eigen::VectorXd::Zero(grid.n_nodes);
    ConstraintFn k;
    k.K = [](double, double p) { return p * p - 1.0; };
    k.dK_dphi = [](double, double p) { return 2.0 * p; };
    for (int q : {1, 11, 39}) {
        CHECK(lagrange_condition_residual(f, grid, phi, zero, k, q) ==
              necessary_condition_residual(f, grid, phi, q));
    }

    // K = phi^2 - 1 at phi = 1: residual = 2 (b-a) lambda + plain residual.
    const Eigen::VectorXd ones = Eigen::VectorXd::Constant(grid.n_nodes, 1.0);
    const Eigen::VectorXd lam = Eigen::VectorXd::Constant(grid.n_nodes, 0.7);
    for (int q : {1, 20, 39}) {
        const double plain = necessary_condition_residual(f, grid, ones, q);
        CHECK(lagrange_condition_residual(f, grid, ones, lam, k, q) ==
              doctest::Approx(2.0 * grid.duration() * 0.7 + plain).epsilon(1e-14));
    }
}

TEST_CASE("discrete consistency: residual matches the gradient of the double trapezoid") {
    // The collocation residual and the exact gradient of the discretized
    // double integral agree to O(dt^2) on smooth data; verify the order.
    // F = sin(t1) pd1 p2^2 + sin(t2) pd2 p1^2 has a genuinely nonzero interior
    // condition (its action is not an endpoint functional).
    TwoTimeFunctional f;
    f.F = [](double t1, double t2, double p1, double pd1, double p2, double pd2) {
        return std::sin(t1) * pd1 * p2 * p2 + std::sin(t2) * pd2 * p1 * p1;
    };
    f.dF_dphi1 = [](double, double t2, double p1, double, double, double pd2) {
        return 2.0 * p1 * std::sin(t2) * pd2;
    };
    f.dF_dphidot1 = [](double t1, double, double, double, double p2, double) {
        return std::sin(t1) * p2 * p2;
    };
    f.dF_dphi2 = [](double t1, double, double, double pd1, double p2, double) {
        return 2.0 * p2 * std::sin(t1) * pd1;
    };
    f.dF_dphidot2 = [](double, double t2, double p1, double, double, double) {
        return std::sin(t2) * p1 * p1;
    };
    f.symmetric = true;

    // Columns 0..2 and N-3..N-1 are touched by the one-sided endpoint
    // derivative rows of the quadrature gradient; strictly inside that
    // closure the symmetric-F relation gradient = 2 w_q * residual holds to
    // finite-difference noise because both sides share the nodal stencils.
    const TimeGrid grid{0.0, 1.0, 65};
    const Eigen::VectorXd phi = sample(grid, [](double t) { return std::sin(2.0 * t); });
    Eigen::VectorXd work = phi;
    const double h = 1e-6;
    double worst = 0.0, scale = 0.0;
    for (int q = 3; q <= grid.n_nodes - 4; ++q) {
        work[q] = phi[q] + h;
        const double sp = two_time_action_value(f, grid, work);
        work[q] = phi[q] - h;
        const double sm = two_time_action_value(f, grid, work);
        work[q] = phi[q];
        const double grad = (sp - sm) / (2.0 * h);
        const double resid = necessary_condition_residual(f, grid, work, q);
        worst = std::max(worst, std::abs(grad - 2.0 * grid.weight(q) * resid));
        scale = std::max(scale, std::abs(grad));
    }
    CHECK(worst <= 1e-6 * std::max(1.0, scale));
}

TEST_CASE("appendix battery passes and the sign injection breaks it") {
    const auto checks = run_appendix_battery(false);
    REQUIRE(checks.size() == appendix_battery_names().size());
    for (const auto& c : checks) {
        INFO(c.name, ": ", c.detail);
        CHECK(c.passed);
    }
    const auto broken = run_appendix_battery(true);
    bool any_failed = false;
    for (const auto& c : broken) any_failed = any_failed || !c.passed;
    CHECK(any_failed);
}

TEST_CASE("battery order check sits near two") {
    const auto checks = run_appendix_battery(false);
    for (const auto& c : checks) {
        if (c.name == "grid_refinement_order") {
            CHECK(c.value > 1.7);
            CHECK(c.value < 2.3);
        }
    }
}

TEST_CASE("reduction guard declines a vanishing window integral") {
    CHECK(reduction_check_declined(0.0, 1.0));
    CHECK(reduction_check_declined(5e-11, 1.0));
    CHECK_FALSE(reduction_check_declined(2e-10, 1.0));
    CHECK_FALSE(reduction_check_declined(1.0, 1.0));
}

TEST_CASE("argument validation") {
    const TimeGrid grid{0.0, 1.0, 21};
    const TwoTimeFunctional f = endpoint_only_functional();
    const Eigen::VectorXd phi = Eigen::VectorXd::Zero(grid.n_nodes);
    CHECK_THROWS_AS(necessary_condition_residual(f, grid, phi, 0), ArgumentError);
    CHECK_THROWS_AS(necessary_condition_residual(f, grid, phi, 20), ArgumentError);
    Eigen::VectorXd short_phi = Eigen::VectorXd::Zero(5);
    CHECK_THROWS_AS(scalar_time_derivative(grid, short_phi), ArgumentError);
}
