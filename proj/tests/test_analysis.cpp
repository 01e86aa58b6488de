#include "fixtures.hpp"

#include "phdamp/analysis.hpp"
#include "phdamp/error.hpp"

#include <doctest.h>

using namespace phdamp;

namespace {

// Stabilizing solution of the 1-DOF algebraic Riccati equation, W = Q,
// mu = 0.1 (scipy.linalg.solve_continuous_are, tests/oracles/oracles.py).
const double kAre[2][2] = {{0.3076460578756206, 0.47722557505165986}, {0.47722557505165986, 33.74865968270863}};

OCPSpec spec_for(std::shared_ptr<PHSystem> sys, CostSpec cost, double box, const Eigen::VectorXd& x0, TimeGrid grid,
                 bool weight = true) {
    OCPSpec s;
    s.W = weight ? sys->Q() : Eigen::MatrixXd::Zero(sys->n(), sys->n());
    s.sys = std::move(sys);
    s.cost = cost;
    s.box = ControlBox::symmetric(s.sys->m(), box);
    s.x0 = x0;
    s.grid = grid;
    return s;
}

}  // namespace

TEST_CASE("switching function cancellations") {
    const auto sys = fixtures::two_dof(2);
    const Trajectory tr = simulate(*sys, fixtures::two_dof_x0(), Eigen::MatrixXd::Ones(2, 10), TimeGrid(1, 10));
    Eigen::MatrixXd lam(4, 10);
    for (int k = 0; k < 10; ++k) lam.col(k) = -sys->Q() * tr.midpoint(k);
    CHECK(switching_function(*sys, tr, lam).cwiseAbs().maxCoeff() <= 1e-12);

    Trajectory rest = simulate(*sys, Eigen::VectorXd::Zero(4), Eigen::MatrixXd::Zero(2, 10), TimeGrid(1, 10));
    CHECK(switching_function(*sys, rest, Eigen::MatrixXd::Zero(4, 10)).norm() == 0.0);
    CHECK_THROWS_AS(switching_function(*sys, rest, Eigen::MatrixXd::Zero(4, 9)), InvariantError);
}

TEST_CASE("arc classification") {
    SUBCASE("identically zero") {
        const ArcPartition p = classify_arcs(Eigen::MatrixXd::Zero(1, 12));
        REQUIRE(p.arcs.size() == 1);
        CHECK(p.arcs[0].kind == ArcKind::Singular);
        CHECK(p.arcs[0].begin == 0);
        CHECK(p.arcs[0].end == 12);
        for (const auto& a : p.active) CHECK(a.empty());
    }
    SUBCASE("bounded away from zero") {
        Eigen::MatrixXd s = Eigen::MatrixXd::Constant(2, 12, 1.0);
        s.row(1).setConstant(-3.0);
        const ArcPartition p = classify_arcs(s);
        CHECK(p.arcs.size() == 2);
        for (const auto& a : p.arcs) CHECK(a.kind == ArcKind::Bang);
        for (const auto& a : p.active) CHECK(a.size() == 2);
    }
    SUBCASE("short crossings are transitions") {
        Eigen::MatrixXd s(1, 12);
        s << 1, 1, 1, 1, 0, 0, -1, -1, 0, 0, 0, 0;
        const ArcPartition p = classify_arcs(s, 1e-4, 3);
        const auto arcs = p.channel_arcs(0);
        REQUIRE(arcs.size() == 4);
        CHECK(arcs[0].kind == ArcKind::Bang);
        CHECK(arcs[1].kind == ArcKind::Transition);
        CHECK(arcs[2].kind == ArcKind::Bang);
        CHECK(arcs[3].kind == ArcKind::Singular);
        CHECK(p.is_singular(5, 0));
        CHECK(!p.is_singular(6, 0));
    }
}

TEST_CASE("supplied-energy complementarity") {
    const auto sys = fixtures::two_dof(2);
    const OCPSpec s = spec_for(sys, CostSpec::supplied_energy(), 30.0, fixtures::two_dof_x0(), TimeGrid(2, 200));
    const OCPSolution sol = solve_ocp(s);
    const ArcPartition p = classify_arcs(switching_function(*sys, sol.trajectory, sol.interval_adjoints));
    const auto& U = sol.trajectory.controls;
    int bang = 0;
    for (int k = 0; k < 200; ++k)
        for (int i = 0; i < 2; ++i) {
            const double si = p.s(i, k), ui = U(i, k);
            const double to_bound = 30.0 - std::abs(ui);
            CHECK(std::min(std::abs(si), to_bound) <= p.tau_s);
            if (std::abs(si) > p.tau_s) {
                ++bang;
                CHECK(to_bound <= 1e-9);
                CHECK(ui * si < 0);
            }
        }
    CHECK(bang > 0);
}

TEST_CASE("singular-arc control law") {
    const auto sys = fixtures::two_dof(2);
    const Eigen::MatrixXd W0 = Eigen::MatrixXd::Zero(4, 4);
    const SingularArcControl zero =
        singular_arc_control(*sys, W0, Eigen::VectorXd::Zero(4), Eigen::VectorXd::Zero(4), Eigen::VectorXd(), {0, 1}, {});
    CHECK(zero.u_proof.norm() == 0.0);
    CHECK(zero.u_theorem.norm() == 0.0);
    CHECK(zero.gram_min_eigenvalue > 0);

    // the variants coincide for W = 0
    const Eigen::Vector4d x(0.3, -0.2, 0.1, 0.05), lam(1, -2, 0.5, 0.25);
    const SingularArcControl a = singular_arc_control(*sys, W0, x, lam, Eigen::VectorXd::Constant(1, 3.0), {0}, {1});
    CHECK((a.u_proof - a.u_theorem).norm() <= 1e-10 * a.u_proof.norm());
    CHECK((a.u_proof - a.u_proof_printed).norm() <= 1e-10 * a.u_proof.norm());
    const SingularArcControl b = singular_arc_control(*sys, sys->Q(), x, lam, Eigen::VectorXd::Constant(1, 3.0), {0}, {1});
    CHECK(b.theorem_gap > 0);

    // undamped with W = 0: no definite Gram matrix
    const auto undamped = fixtures::one_dof(0.0);
    CHECK_THROWS_AS(singular_arc_control(*undamped, Eigen::MatrixXd::Zero(2, 2), Eigen::Vector2d(1, 0),
                                         Eigen::Vector2d(0, 1), Eigen::VectorXd(), {0}, {}),
                    InvariantError);
}

TEST_CASE("Gram matrix of the generated frame is definite") {
    const PHSystem sys = to_port_hamiltonian(assemble(generate_frame(default_frame_parameters())));
    std::vector<int> all(static_cast<std::size_t>(sys.m()));
    for (int i = 0; i < sys.m(); ++i) all[static_cast<std::size_t>(i)] = i;
    const SingularArcControl c = singular_arc_control(sys, Eigen::MatrixXd::Zero(sys.n(), sys.n()),
                                                      Eigen::VectorXd::Zero(sys.n()), Eigen::VectorXd::Zero(sys.n()),
                                                      Eigen::VectorXd(), all, {});
    CHECK(c.gram_min_eigenvalue > 0);
}

TEST_CASE("singular-arc law on converged supplied-energy solutions") {
    for (int actuators : {1, 2}) {
        CAPTURE(actuators);
        const auto sys = fixtures::two_dof(actuators);
        const OCPSpec s = spec_for(sys, CostSpec::supplied_energy(), 30.0, fixtures::two_dof_x0(), TimeGrid(2, 400), false);
        const OCPSolution sol = solve_ocp(s);
        const ArcPartition p = classify_arcs(switching_function(*sys, sol.trajectory, sol.interval_adjoints));
        const SingularArcCheck c = check_singular_arcs(s, sol.trajectory, sol.interval_adjoints, p);
        CHECK(c.points > 20);
        CHECK(c.proof_error <= 1e-3);
    }
}

TEST_CASE("filtered controls") {
    Eigen::MatrixXd u(1, 6);
    u << 1, -1, 1, -1, 1, -1;
    const Eigen::MatrixXd f = filtered_controls(u);
    CHECK(f(0, 0) == 1);
    CHECK(f(0, 5) == -1);
    for (int k = 1; k < 5; ++k) CHECK(f(0, k) == 0.0);
    const Eigen::MatrixXd lin = Eigen::RowVectorXd::LinSpaced(6, 0, 5);
    CHECK((filtered_controls(lin) - lin).norm() == 0.0);
}

TEST_CASE("Pontryagin residuals") {
    SUBCASE("rest") {
        const OCPSpec s = spec_for(fixtures::one_dof(), CostSpec::quadratic(0.1), 10, Eigen::Vector2d::Zero(), TimeGrid(1, 20));
        const OCPSolution sol = solve_ocp(s);
        const PontryaginResidual r = pontryagin_residual(s, sol.trajectory, sol.interval_adjoints);
        CHECK(r.state_max == 0.0);
        CHECK(r.adjoint_max == 0.0);
        CHECK(r.argmin_max == 0.0);
    }
    SUBCASE("second order on the 2-DOF system") {
        double prev_state = 0, prev_adj = 0;
        for (int N : {50, 100, 200, 400}) {
            const OCPSpec s = spec_for(fixtures::two_dof(2), CostSpec::quadratic(0.1), 1e6, fixtures::two_dof_x0(),
                                       TimeGrid(2, N));
            const OCPSolution sol = solve_ocp(s);
            const PontryaginResidual r = pontryagin_residual(s, sol.trajectory, sol.interval_adjoints);
            if (prev_state > 0) {
                CHECK(prev_state / r.state_max == doctest::Approx(4.0).epsilon(0.125));
                CHECK(prev_adj / r.adjoint_max == doctest::Approx(4.0).epsilon(0.125));
            }
            prev_state = r.state_max;
            prev_adj = r.adjoint_max;
        }
    }
    SUBCASE("corrupted adjoint") {
        const OCPSpec s = spec_for(fixtures::two_dof(2), CostSpec::quadratic(0.1), 1e6, fixtures::two_dof_x0(),
                                   TimeGrid(2, 100));
        const OCPSolution sol = solve_ocp(s);
        const PontryaginResidual r = pontryagin_residual(s, sol.trajectory, sol.interval_adjoints);
        const PontryaginResidual bad = pontryagin_residual(s, sol.trajectory, 2.0 * sol.interval_adjoints);
        CHECK(bad.adjoint_max > 100 * r.adjoint_max);
        CHECK(bad.state_max == r.state_max);
    }
}

TEST_CASE("Riccati reference") {
    SUBCASE("no state weight") {
        const auto sys = fixtures::two_dof();
        const RiccatiReference ref =
            riccati_reference(*sys, Eigen::MatrixXd::Zero(4, 4), 0.1, fixtures::two_dof_x0(), TimeGrid(1, 20));
        for (const auto& P : ref.P) CHECK(P.norm() == 0.0);
        CHECK(ref.trajectory.controls.norm() == 0.0);
        const int fine = 20 * ref.substeps;
        const Trajectory free = simulate(*sys, fixtures::two_dof_x0(), Eigen::MatrixXd::Zero(1, fine), TimeGrid(1, fine));
        for (int k = 0; k <= 20; ++k)
            CHECK((ref.trajectory.states.col(k) - free.states.col(k * ref.substeps)).norm() <= 1e-12);
    }
    SUBCASE("algebraic limit") {
        const auto sys = fixtures::one_dof();
        const MatrixXd P = algebraic_riccati(sys->A(), sys->B(), sys->Q(), 0.1);
        const RiccatiReference ref = riccati_reference(*sys, sys->Q(), 0.1, Eigen::Vector2d(2, 1), TimeGrid(40, 4000));
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) {
                CHECK(P(i, j) == doctest::Approx(kAre[i][j]).epsilon(1e-10));
                CHECK(ref.P.front()(i, j) == doctest::Approx(kAre[i][j]).epsilon(1e-6));
            }
    }
    SUBCASE("unconstrained QP matches the rollout") {
        const auto sys = fixtures::two_dof();
        const OCPSpec s = spec_for(sys, CostSpec::quadratic(0.1), 1e6, fixtures::two_dof_x0(), TimeGrid(2, 800));
        const OCPSolution sol = solve_ocp(s);
        const RiccatiReference ref = riccati_reference(*sys, s.W, 0.1, s.x0, s.grid);
        const double ex = (sol.trajectory.states - ref.trajectory.states).cwiseAbs().maxCoeff() /
                          ref.trajectory.states.cwiseAbs().maxCoeff();
        const double eu = (sol.trajectory.controls - ref.trajectory.controls).cwiseAbs().maxCoeff() /
                          ref.trajectory.controls.cwiseAbs().maxCoeff();
        CHECK(ex <= 1e-4);
        CHECK(eu <= 1e-3);
    }
}

TEST_CASE("kernel projector") {
    const auto sys = fixtures::two_dof(2);
    const KernelProjector invertible = kernel_projector(*sys, sys->Q());
    CHECK(invertible.dimension == 0);
    CHECK(invertible.projector.norm() == 0.0);

    const KernelProjector disp = kernel_projector(*sys, Eigen::MatrixXd::Zero(4, 4));
    CHECK(disp.dimension == 2);
    Eigen::MatrixXd expect = Eigen::MatrixXd::Zero(4, 4);
    expect(2, 2) = expect(3, 3) = 1;
    CHECK((disp.projector - expect).norm() <= 1e-10);
    CHECK((disp.projector * disp.projector - disp.projector).norm() <= 1e-10);
    CHECK((disp.projector - disp.projector.transpose()).norm() <= 1e-10);

    const auto undamped = fixtures::one_dof(0.0);
    const KernelProjector all = kernel_projector(*undamped, Eigen::MatrixXd::Zero(2, 2));
    CHECK(all.dimension == 2);
    CHECK((all.projector - Eigen::MatrixXd::Identity(2, 2)).norm() <= 1e-12);
}

TEST_CASE("turnpike metrics") {
    const auto sys = fixtures::one_dof();
    SUBCASE("rest") {
        std::vector<Trajectory> trs;
        for (double T : {1.0, 2.0, 4.0})
            trs.push_back(simulate(*sys, Eigen::Vector2d::Zero(), Eigen::MatrixXd::Zero(1, 10), TimeGrid(T, 10)));
        const TurnpikeReport rep = turnpike_metrics(trs, kernel_projector(*sys, sys->Q()));
        for (const auto& s : rep.samples) {
            CHECK(s.combined_integral == 0.0);
            CHECK(s.distance_integral == 0.0);
        }
        CHECK(rep.plateau);
    }
    SUBCASE("damped 1-DOF, quadratic cost") {
        std::vector<Trajectory> trs;
        for (double T : {8.0, 4.0, 1.0, 2.0}) {
            const OCPSpec s = spec_for(sys, CostSpec::quadratic(0.1), 1e6, Eigen::Vector2d(2, 1),
                                       TimeGrid(T, static_cast<int>(T * 100)));
            trs.push_back(solve_ocp(s).trajectory);
        }
        const TurnpikeReport rep = turnpike_metrics(trs, kernel_projector(*sys, sys->Q()));
        REQUIRE(rep.samples.size() == 4);
        CHECK(rep.samples.front().T == 1.0);
        CHECK(rep.samples.back().T == 8.0);
        CHECK(rep.combined_variation < 0.05);
        CHECK(rep.plateau);
        for (const auto& s : rep.samples) {
            CHECK(s.state_integral >= 0);
            CHECK(s.control_integral >= 0);
            CHECK(s.distance_integral == doctest::Approx(s.state_integral));
        }
        CHECK(rep.samples.back().fit_omega > 0);
    }
    SUBCASE("too few horizons") {
        std::vector<Trajectory> trs(2, simulate(*sys, Eigen::Vector2d(1, 0), Eigen::MatrixXd::Zero(1, 4), TimeGrid(1, 4)));
        CHECK_THROWS_AS(turnpike_metrics(trs, kernel_projector(*sys, sys->Q())), ConfigError);
    }
}

TEST_CASE("comparison table") {
    EnergyLedger base;
    base.initial = 10.0;
    base.dissipated = 9.0;
    base.remaining = 1.0;
    ComparisonRow unc{RowKind::Uncontrolled, 0.0, base, TimeGrid(1, 10)};
    const auto single = compare_costs({unc});
    REQUIRE(single.size() == 1);
    CHECK(single[0].ledger.withdrawn == 0.0);

    EnergyLedger se = base;
    se.withdrawn = 5.0;
    ComparisonRow a{RowKind::SuppliedEnergy, 0.0, se, TimeGrid(1, 10)};
    ComparisonRow q6{RowKind::Quadratic, 1e-6, se, TimeGrid(1, 10)};
    ComparisonRow q8{RowKind::Quadratic, 1e-8, se, TimeGrid(1, 10)};
    const auto rows = compare_costs({a, q8, unc, q6});
    CHECK(rows[0].kind == RowKind::Uncontrolled);
    CHECK(rows[1].mu == 1e-6);
    CHECK(rows[2].mu == 1e-8);
    CHECK(rows[3].kind == RowKind::SuppliedEnergy);
    CHECK(comparison_csv(rows).find("quadratic mu=1e-08") != std::string::npos);
    CHECK(comparison_text(rows).find("Withdrawn [J]") != std::string::npos);

    ComparisonRow other = q6;
    other.ledger.initial = 11.0;
    CHECK_THROWS_AS(compare_costs({unc, other}), InvariantError);
    other = q6;
    other.grid = TimeGrid(1, 20);
    CHECK_THROWS_AS(compare_costs({unc, other}), InvariantError);
}
