#include "fixtures.hpp"

#include "phdamp/error.hpp"
#include "phdamp/ph_system.hpp"

#include <doctest.h>

#include <Eigen/Eigenvalues>

#include <filesystem>
#include <random>
#include <sstream>

using namespace phdamp;

TEST_CASE("lift of the 1-DOF model") {
    const PHSystem sys = to_port_hamiltonian(fixtures::one_dof_model());
    CHECK(sys.n() == 2);
    CHECK(sys.m() == 1);
    Eigen::Matrix2d J, R, Q;
    J << 0, -1, 1, 0;
    R << 0.1, 0, 0, 0;
    Q << 0.5, 0, 0, 50;
    CHECK((sys.J() - J).norm() == 0.0);
    CHECK((sys.R() - R).norm() == 0.0);
    CHECK((sys.Q() - Q).norm() < 1e-15);
    CHECK((sys.B() - Eigen::Vector2d(1, 0)).norm() == 0.0);
    CHECK(sys.spectral_abscissa() < 0);

    const Eigen::Vector2d x(2, 1);
    CHECK(hamiltonian(sys, x) == doctest::Approx(26.0).epsilon(1e-15));
    CHECK(output(sys, x)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(hamiltonian(sys, Eigen::Vector2d::Zero()) == 0.0);
    CHECK(output(sys, Eigen::Vector2d::Zero())[0] == 0.0);
    CHECK_THROWS(hamiltonian(sys, Eigen::Vector3d::Zero()));
}

TEST_CASE("undamped lift is oscillatory") {
    const PHSystem sys = to_port_hamiltonian(fixtures::one_dof_model(0.0));
    CHECK(sys.R().norm() == 0.0);
    Eigen::EigenSolver<Eigen::MatrixXd> es(sys.A());
    for (int i = 0; i < 2; ++i) CHECK(std::abs(es.eigenvalues()[i].real()) < 1e-12);
    CHECK(std::abs(es.eigenvalues()[0].imag()) == doctest::Approx(5.0));
}

TEST_CASE("invalid structure matrices are rejected") {
    const Eigen::Matrix2d I = Eigen::Matrix2d::Identity();
    Eigen::Matrix2d J;
    J << 0, -1, 1, 0;
    const Eigen::Vector2d B(1, 0);
    CHECK_THROWS_AS(PHSystem(I, Eigen::Matrix2d::Zero(), I, B), InvariantError);
    CHECK_THROWS_AS(PHSystem(J, -I, I, B), InvariantError);
    CHECK_THROWS_AS(PHSystem(J, Eigen::Matrix2d::Zero(), -I, B), InvariantError);
    CHECK_NOTHROW(PHSystem(J, Eigen::Matrix2d::Zero(), I, B));
}

TEST_CASE("energy and output against second-order quantities") {
    const SecondOrderModel mo = fixtures::two_dof_model(2);
    const PHSystem sys = to_port_hamiltonian(mo);
    const Eigen::MatrixXd M(mo.M), K(mo.K), F(mo.F);
    std::mt19937 rng(7);
    std::normal_distribution<double> nd;
    for (int trial = 0; trial < 20; ++trial) {
        Eigen::VectorXd x(4);
        for (int i = 0; i < 4; ++i) x[i] = nd(rng);
        const Eigen::VectorXd p = x.head(2), q = x.tail(2);
        const Eigen::VectorXd qdot = M.ldlt().solve(p);
        const double energy = 0.5 * (qdot.dot(M * qdot) + q.dot(K * q));
        CHECK(std::abs(hamiltonian(sys, x) - energy) <= 1e-12 * energy);
        CHECK((output(sys, x) - F.transpose() * qdot).norm() <= 1e-12 * qdot.norm());

        // skewness and the dissipation identity
        CHECK(std::abs(x.dot(sys.J() * x)) <= 1e-12 * x.squaredNorm());
        const double diss = (sys.R_sqrt() * sys.Q() * x).squaredNorm();
        CHECK(std::abs(x.dot(sys.Q() * sys.A() * x) + diss) <= 1e-10 * (diss + 1e-300));
    }
    const Eigen::MatrixXd sym = sys.Q() * sys.A() + sys.A().transpose() * sys.Q() + 2 * sys.QRQ();
    CHECK(sym.cwiseAbs().maxCoeff() < 1e-12 * sys.QRQ().cwiseAbs().maxCoeff());
}

TEST_CASE("lift round trip reproduces the blocks") {
    const SecondOrderModel mo = fixtures::two_dof_model(2);
    const PHSystem sys = to_port_hamiltonian(mo);
    const Eigen::MatrixXd M(mo.M), K(mo.K), D(mo.D), F(mo.F);
    CHECK((sys.R().topLeftCorner(2, 2) - D).norm() == 0.0);
    CHECK((sys.Q().bottomRightCorner(2, 2) - K).norm() == 0.0);
    CHECK((sys.Q().topLeftCorner(2, 2).inverse() - M).norm() < 1e-13);
    CHECK((sys.B().topRows(2) - F).norm() == 0.0);
    CHECK(sys.B().bottomRows(2).norm() == 0.0);
    REQUIRE(sys.origin());
    CHECK(sys.n_dof() == 2);
}

TEST_CASE("power balance along the exact free response") {
    const auto sys = fixtures::one_dof();
    const fixtures::Oscillator osc{2.0, 0.1, 50.0, 0.3, -1.2};
    CHECK(power_balance_residual(*sys, Eigen::Vector2d::Zero(), Eigen::VectorXd::Zero(1), Eigen::Vector2d::Zero()) ==
          0.0);
    for (double t : {0.0, 0.37, 1.9, 4.2}) {
        const Eigen::Vector2d x(2.0 * osc.v(t), osc.q(t));
        const Eigen::Vector2d xdot(2.0 * osc.acc(t), osc.v(t));
        const double power = std::abs(xdot.dot(sys->Q() * x)) + 1.0;
        CHECK(std::abs(power_balance_residual(*sys, x, Eigen::VectorXd::Zero(1), xdot)) <= 1e-12 * power);
        const Eigen::Vector2d delta(0.25, -0.5);
        const double r0 = power_balance_residual(*sys, x, Eigen::VectorXd::Zero(1), xdot);
        const double r1 = power_balance_residual(*sys, x, Eigen::VectorXd::Zero(1), xdot + delta);
        CHECK(r1 - r0 == doctest::Approx(delta.dot(sys->Q() * x)).epsilon(1e-12));
    }
}

TEST_CASE("triplet export and import") {
    const PHSystem sys = to_port_hamiltonian(fixtures::two_dof_model(2));
    std::stringstream ss;
    write_triplets(ss, sys.Q(), "storage");
    const Eigen::MatrixXd Q = read_triplets(ss);
    CHECK((Q - sys.Q()).norm() == 0.0);

    const auto dir = std::filesystem::temp_directory_path() / "phdamp_test_triplets";
    std::filesystem::create_directories(dir);
    export_system(sys, dir.string());
    const PHSystem back = import_system(dir.string());
    CHECK((back.J() + back.J().transpose()).norm() <= 1e-12);
    CHECK((back.R() - sys.R()).norm() == 0.0);
    CHECK((back.Q() - sys.Q()).norm() == 0.0);
    CHECK((back.B() - sys.B()).norm() == 0.0);
    std::filesystem::remove_all(dir);
}
