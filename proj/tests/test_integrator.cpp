#include "fixtures.hpp"

#include "phdamp/integrator.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>

using namespace phdamp;

namespace {

PHSystem unit_oscillator() {
    Eigen::Matrix2d J;
    J << 0, -1, 1, 0;
    return PHSystem(J, Eigen::Matrix2d::Zero(), Eigen::Matrix2d::Identity(), Eigen::Vector2d(1, 0));
}

Eigen::MatrixXd random_controls(int m, int N, unsigned seed, double scale) {
    std::mt19937 rng(seed);
    std::uniform_real_distribution<double> ud(-scale, scale);
    Eigen::MatrixXd u(m, N);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < m; ++i) u(i, k) = ud(rng);
    return u;
}

}  // namespace

TEST_CASE("midpoint step of the unit oscillator") {
    const PHSystem sys = unit_oscillator();
    const Eigen::VectorXd x1 = midpoint_step(sys, Eigen::Vector2d(1, 0), Eigen::VectorXd::Zero(1), 0.2);
    CHECK(x1[0] == doctest::Approx(0.99 / 1.01).epsilon(1e-15));
    CHECK(x1[1] == doctest::Approx(0.2 / 1.01).epsilon(1e-15));
    CHECK(x1.norm() == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(midpoint_step(sys, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1), 0.2).norm() == 0.0);
}

TEST_CASE("discrete conservation over a full period") {
    const PHSystem sys = unit_oscillator();
    const TimeGrid grid(2 * M_PI, 157);
    const Trajectory tr = simulate(sys, Eigen::Vector2d(0.3, -0.8), Eigen::MatrixXd::Zero(1, 157), grid);
    CHECK(std::abs(hamiltonian(sys, tr.states.col(157)) - hamiltonian(sys, tr.states.col(0))) <=
          1e-12 * hamiltonian(sys, tr.states.col(0)));
}

TEST_CASE("rest stays at rest") {
    const auto sys = fixtures::two_dof();
    const Trajectory tr = simulate(*sys, Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Zero(1, 20), TimeGrid(1, 20));
    CHECK(tr.states.norm() == 0.0);
    const EnergyLedger led = energy_audit(*sys, tr);
    CHECK(led.withdrawn == 0.0);
    CHECK(led.dissipated == 0.0);
    CHECK(led.remaining == 0.0);
    CHECK(led.initial == 0.0);
    CHECK(led.balance_residual == 0.0);
}

TEST_CASE("damped free response loses energy every step") {
    const auto sys = fixtures::two_dof();
    const Trajectory tr = simulate(*sys, fixtures::two_dof_x0(), Eigen::MatrixXd::Zero(1, 50), TimeGrid(2, 50));
    for (int k = 0; k < 50; ++k)
        CHECK(hamiltonian(*sys, tr.states.col(k + 1)) < hamiltonian(*sys, tr.states.col(k)));
    const EnergyLedger led = energy_audit(*sys, tr);
    CHECK(led.withdrawn == 0.0);
    CHECK(std::abs(led.initial - led.remaining - led.dissipated) <= 1e-8 * led.initial);
}

TEST_CASE("energy balance for arbitrary controls and steps") {
    const auto sys = fixtures::two_dof(2);
    for (int N : {1, 7, 64, 500})
        for (double T : {0.01, 1.0, 25.0}) {
            const Eigen::MatrixXd u = random_controls(2, N, static_cast<unsigned>(N), 40.0);
            const Trajectory tr = simulate(*sys, fixtures::two_dof_x0(), u, TimeGrid(T, N));
            const EnergyLedger led = energy_audit(*sys, tr);
            CHECK(led.balance_residual <= 1e-8 * led.initial);
            CHECK(step_balance_residuals(*sys, tr).cwiseAbs().maxCoeff() <= 1e-8 * led.initial);
            CHECK(led.dissipated >= 0);
            CHECK(led.remaining >= 0);
            const VectorXd cum = cumulative_withdrawn(*sys, tr);
            CHECK(cum[0] == 0.0);
            CHECK(cum[N] == doctest::Approx(led.withdrawn).epsilon(1e-12));
        }
}

TEST_CASE("second-order global error against the closed-form response") {
    const auto sys = fixtures::one_dof();
    const fixtures::Oscillator osc{2.0, 0.1, 50.0, 1.0, 0.0};
    const double T = 2.0;
    const Eigen::Vector2d exact(2.0 * osc.v(T), osc.q(T));
    double prev = 0;
    for (int N : {100, 200, 400, 800}) {
        const Trajectory tr = simulate(*sys, Eigen::Vector2d(0.0, 1.0), Eigen::MatrixXd::Zero(1, N), TimeGrid(T, N));
        const double err = (tr.states.col(N) - exact).norm();
        if (prev > 0) {
            CHECK(prev / err >= 3.5);
            CHECK(prev / err <= 4.5);
        }
        prev = err;
    }
}

TEST_CASE("large steps stay bounded on damped systems") {
    const auto sys = fixtures::two_dof();
    for (double h : {0.1, 1.0, 10.0, 1000.0}) {
        const Trajectory tr = simulate(*sys, fixtures::two_dof_x0(), Eigen::MatrixXd::Zero(1, 200), TimeGrid(200 * h, 200));
        double prev = hamiltonian(*sys, tr.states.col(0));
        for (int k = 1; k <= 200; ++k) {
            const double e = hamiltonian(*sys, tr.states.col(k));
            CHECK(e <= prev * (1 + 1e-12));
            prev = e;
        }
    }
}

TEST_CASE("zero-order hold resampling") {
    Eigen::MatrixXd u(1, 3);
    u << 1, 2, 3;
    const Eigen::MatrixXd f = resample_controls(u, TimeGrid(1, 3), TimeGrid(1, 9));
    REQUIRE(f.cols() == 9);
    for (int k = 0; k < 9; ++k) CHECK(f(0, k) == u(0, k / 3));
    // non-nested grids take the control active at the fine midpoint
    const Eigen::MatrixXd g = resample_controls(u, TimeGrid(1, 3), TimeGrid(1, 4));
    CHECK(g(0, 0) == 1);
    CHECK(g(0, 1) == 2);
    CHECK(g(0, 2) == 2);
    CHECK(g(0, 3) == 3);
}

TEST_CASE("trajectory csv layout") {
    const auto sys = fixtures::one_dof();
    Eigen::MatrixXd u(1, 2);
    u << 0.5, -0.25;
    const Trajectory tr = simulate(*sys, Eigen::Vector2d(2, 1), u, TimeGrid(1, 2));
    std::ostringstream os;
    write_trajectory_csv(os, *sys, tr);
    std::istringstream is(os.str());
    std::string header, line;
    std::getline(is, header);
    CHECK(header == "t,x_1,x_2,u_1,H,balance_residual");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    CHECK(rows == 3);

    TrajectoryCsvOptions opt;
    opt.state_columns = {1};
    std::ostringstream os2;
    write_trajectory_csv(os2, *sys, tr, opt);
    CHECK(os2.str().substr(0, os2.str().find('\n')) == "t,x_2,u_1,H,balance_residual");
}
