#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qcollapse/trajectory.hpp"
#include "test_support.hpp"

using namespace qcollapse;
using qctest::cd;

namespace {

CoefficientTrajectory constant_traj(const TimeGrid& grid, const Eigen::VectorXcd& c) {
    CoefficientTrajectory traj;
    traj.grid = grid;
    traj.values = c.transpose().replicate(grid.n_nodes, 1);
    return traj;
}

} // namespace

TEST_CASE("total_weight pinned values") {
    TimeGrid g{0.0, 1.0, 5};
    Eigen::VectorXcd c4(4);
    c4 << 1.0, 0.0, 0.0, 0.0;
    CHECK(total_weight(constant_traj(g, c4), 2) == 1.0);

    Eigen::VectorXcd c2(2);
    c2 << cd(1.0 / std::sqrt(2.0), 0.0), cd(0.0, 1.0 / std::sqrt(2.0));
    CHECK(total_weight(constant_traj(g, c2), 0) == doctest::Approx(1.0).epsilon(1e-15));

    Eigen::VectorXcd c(2);
    c << 0.6, 0.3;
    CHECK(total_weight(constant_traj(g, c), 4) == doctest::Approx(0.45).epsilon(1e-15));
    CHECK_THROWS_AS(total_weight(constant_traj(g, c), 5), ArgumentError);
}

TEST_CASE("outcome_weights: symmetric split and concentration") {
    const ModeSpectrum spec = qctest::zero_energy_two_by_two();
    TimeGrid g{0.0, 1.0, 3};
    Eigen::VectorXcd c(4);
    c << cd(1.0 / std::sqrt(2.0), 0.0), 0.0, cd(1.0 / std::sqrt(2.0), 0.0), 0.0;
    const auto p = outcome_weights(constant_traj(g, c), spec, 1);
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(p[1] == doctest::Approx(0.5).epsilon(1e-15));

    Eigen::VectorXcd cj(4);
    cj << cd(0.3, 0.4), cd(0.5, -0.1), 0.0, 0.0;
    const auto pj = outcome_weights(constant_traj(g, cj), spec, 0);
    CHECK(pj[1] == 0.0);
    CHECK(pj[0] == doctest::Approx(0.25 + 0.26).epsilon(1e-15));
}

TEST_CASE("outcome_weights against brute-force double loop") {
    const ModeSpectrum spec = qctest::matched_two_by_two();
    TimeGrid g{0.0, 2.0, 17};
    const auto traj = qctest::random_trajectory(g, spec.num_modes(), 42);
    for (int node : {0, 7, 16}) {
        const auto p = outcome_weights(traj, spec, node);
        for (int j = 0; j < spec.num_system_modes(); ++j) {
            double brute = 0.0;
            for (int k = 0; k < spec.num_pointer_modes(); ++k) {
                const cd v = traj.values(node, spec.flat(j, k));
                brute += v.real() * v.real() + v.imag() * v.imag();
            }
            CHECK(p[j] == doctest::Approx(brute).epsilon(1e-15));
        }
        // Partition property: sum_j P_j = total weight.
        CHECK(p.sum() == doctest::Approx(total_weight(traj, node)).epsilon(1e-14));
    }
}

TEST_CASE("time_derivative: constant, analytic and polynomial exactness") {
    TimeGrid g{0.0, 1.0, 101};
    Eigen::VectorXcd c(2);
    c << cd(0.3, -0.2), cd(0.0, 1.0);
    // Interior rows cancel exactly; the one-sided endpoint rows leave only
    // the rounding of 3z against 4z.
    CHECK(time_derivative(constant_traj(g, c)).cwiseAbs().maxCoeff() < 1e-13);

    // C(t) = exp(i w t): derivative i w C with O(dt^2) error.
    const double w = 2.0;
    CoefficientTrajectory osc;
    osc.grid = g;
    osc.values.resize(g.n_nodes, 1);
    for (int n = 0; n < g.n_nodes; ++n) osc.values(n, 0) = std::exp(cd(0.0, w * g.t(n)));
    const auto d = time_derivative(osc);
    double worst = 0.0;
    for (int n = 0; n < g.n_nodes; ++n) {
        worst = std::max(worst, std::abs(d(n, 0) - cd(0.0, w) * osc.values(n, 0)));
    }
    CHECK(worst < 5.0 * w * w * w * g.dt() * g.dt());

    // Linear trajectory: every stencil is exact.
    CoefficientTrajectory lin;
    lin.grid = g;
    lin.values.resize(g.n_nodes, 1);
    const cd slope(0.7, -1.3);
    for (int n = 0; n < g.n_nodes; ++n) lin.values(n, 0) = slope * g.t(n) + cd(1.0, 0.5);
    const auto dl = time_derivative(lin);
    for (int n = 0; n < g.n_nodes; ++n) {
        CHECK(std::abs(dl(n, 0) - slope) < 1e-13);
    }
}

TEST_CASE("time_derivative is linear under global complex scaling") {
    TimeGrid g{0.0, 1.5, 33};
    const auto traj = qctest::random_trajectory(g, 3, 5);
    const cd z(0.8, -1.7);
    CoefficientTrajectory scaled = traj;
    scaled.values *= z;
    const Eigen::MatrixXcd lhs = time_derivative(scaled);
    const Eigen::MatrixXcd rhs = z * time_derivative(traj).array();
    CHECK((lhs - rhs).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("collapse_metrics pinned cases") {
    const ModeSpectrum spec = qctest::zero_energy_two_by_two();
    TimeGrid g{0.0, 1.0, 3};

    // Fully collapsed on the matched mode (0,0).
    Eigen::VectorXcd c(4);
    c << 1.0, 0.0, 0.0, 0.0;
    auto m = collapse_metrics(constant_traj(g, c), spec);
    CHECK(m.agreement_residual == 0.0);
    CHECK(m.purity == 1.0);
    CHECK(m.dominant_j == 0);
    CHECK(m.collapsed);

    // Equal split over the two matched modes: tie goes to the lowest index.
    c << cd(1.0 / std::sqrt(2.0), 0.0), 0.0, 0.0, cd(1.0 / std::sqrt(2.0), 0.0);
    m = collapse_metrics(constant_traj(g, c), spec);
    CHECK(m.agreement_residual == 0.0);
    CHECK(m.purity == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(m.dominant_j == 0);
    CHECK_FALSE(m.collapsed);

    // All weight on a mismatched mode.
    c << 0.0, 1.0, 0.0, 0.0;
    m = collapse_metrics(constant_traj(g, c), spec);
    CHECK(m.agreement_residual == 1.0);

    // Vanished state is an error.
    c << 1e-8, 0.0, 0.0, 0.0;
    CHECK_THROWS_AS(collapse_metrics(constant_traj(g, c), spec), DegenerateStateError);
}

TEST_CASE("purity stays within [1/J, 1] on random states") {
    const ModeSpectrum spec = qctest::matched_two_by_two();
    TimeGrid g{0.0, 1.0, 9};
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        const auto traj = qctest::random_trajectory(g, spec.num_modes(), 100 + seed);
        const auto m = collapse_metrics(traj, spec);
        CHECK(m.purity >= 1.0 / spec.num_system_modes() - 1e-12);
        CHECK(m.purity <= 1.0 + 1e-12);
    }
}

TEST_CASE("trajectory validation") {
    CoefficientTrajectory traj;
    traj.grid = TimeGrid{0.0, 1.0, 4};
    traj.values.resize(3, 2);
    traj.values.setZero();
    CHECK_THROWS_AS(traj.validate(), ArgumentError);
    traj.values.resize(4, 2);
    traj.values.setZero();
    traj.values(1, 1) = cd(std::nan(""), 0.0);
    CHECK_THROWS_AS(traj.validate(), ArgumentError);
    traj.values(1, 1) = 0.0;
    CHECK_NOTHROW(traj.validate());
}
