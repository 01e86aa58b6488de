#include "phdamp/integrator.hpp"

#include "phdamp/error.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <cstdio>
#include <ostream>
#include <sstream>

namespace phdamp {

TimeGrid::TimeGrid(double horizon, int intervals) : T(horizon), N(intervals) {
    if (!(horizon > 0) || !std::isfinite(horizon))
        throw ConfigError("TimeGrid: horizon must be positive, got " + std::to_string(horizon));
    if (intervals < 1) throw ConfigError("TimeGrid: need at least one interval");
}

MidpointStepper::MidpointStepper(const PHSystem& sys, double h) : h_(h) {
    if (!(h > 0)) throw ConfigError("midpoint step: h must be positive");
    const int n = sys.n();
    const MatrixXd I = MatrixXd::Identity(n, n);
    explicit_part_ = I + 0.5 * h * sys.A();
    input_part_ = h * sys.B();
    const MatrixXd implicit_part = I - 0.5 * h * sys.A();
    SparseMatrix S = implicit_part.sparseView();
    lu_ = std::make_shared<Eigen::SparseLU<SparseMatrix>>();
    lu_->compute(S);
    bool singular = lu_->info() != Eigen::Success;
    if (!singular) {
        // SparseLU reports exact zero pivots only; reject numerically singular resolvents too.
        const double logdet = lu_->logAbsDeterminant();
        singular = !std::isfinite(logdet);
    }
    if (singular) {
        std::ostringstream msg;
        msg << "midpoint step: resolvent I - (h/2)A is singular for h = " << h
            << " (2/h = " << 2.0 / h << " is an eigenvalue of A)";
        throw SolverError(msg.str());
    }
}

VectorXd MidpointStepper::step(const VectorXd& x, const VectorXd& u) const {
    if (x.size() != explicit_part_.rows() || u.size() != input_part_.cols())
        throw InvariantError("midpoint step: dimension mismatch");
    VectorXd rhs = explicit_part_ * x;
    if (input_part_.cols() > 0) rhs.noalias() += input_part_ * u;
    return lu_->solve(rhs);
}

VectorXd midpoint_step(const PHSystem& sys, const VectorXd& x, const VectorXd& u, double h) {
    return MidpointStepper(sys, h).step(x, u);
}

Trajectory simulate(const PHSystem& sys, const VectorXd& x0, const MatrixXd& controls, const TimeGrid& grid) {
    if (x0.size() != sys.n()) throw InvariantError("simulate: x0 has wrong length");
    if (controls.rows() != sys.m() || controls.cols() != grid.N)
        throw InvariantError("simulate: controls must be " + std::to_string(sys.m()) + " x " +
                             std::to_string(grid.N));
    const MidpointStepper stepper(sys, grid.h());
    Trajectory traj;
    traj.grid = grid;
    traj.controls = controls;
    traj.states.resize(sys.n(), grid.N + 1);
    traj.states.col(0) = x0;
    for (int k = 0; k < grid.N; ++k) traj.states.col(k + 1) = stepper.step(traj.states.col(k), controls.col(k));
    return traj;
}

namespace {

void check_traj(const PHSystem& sys, const Trajectory& traj) {
    if (traj.states.rows() != sys.n() || traj.states.cols() != traj.grid.N + 1 ||
        traj.controls.rows() != sys.m() || traj.controls.cols() != traj.grid.N)
        throw InvariantError("trajectory dimensions do not match the system/grid");
}

}  // namespace

EnergyLedger energy_audit(const PHSystem& sys, const Trajectory& traj) {
    check_traj(sys, traj);
    const double h = traj.grid.h();
    EnergyLedger ledger;
    for (int k = 0; k < traj.grid.N; ++k) {
        const VectorXd xm = traj.midpoint(k);
        const VectorXd Qx = sys.Q() * xm;
        ledger.dissipated += h * xm.dot(sys.QRQ() * xm);
        if (sys.m() > 0) ledger.withdrawn -= h * traj.controls.col(k).dot(sys.B().transpose() * Qx);
    }
    ledger.initial = hamiltonian(sys, traj.states.col(0));
    ledger.remaining = hamiltonian(sys, traj.states.col(traj.grid.N));
    ledger.balance_residual =
        std::abs(ledger.initial - ledger.remaining - ledger.dissipated - ledger.withdrawn);
    return ledger;
}

VectorXd step_balance_residuals(const PHSystem& sys, const Trajectory& traj) {
    check_traj(sys, traj);
    const double h = traj.grid.h();
    VectorXd res(traj.grid.N);
    for (int k = 0; k < traj.grid.N; ++k) {
        const VectorXd xm = traj.midpoint(k);
        const double supplied =
            sys.m() > 0 ? traj.controls.col(k).dot(sys.B().transpose() * (sys.Q() * xm)) : 0.0;
        res[k] = hamiltonian(sys, traj.states.col(k + 1)) - hamiltonian(sys, traj.states.col(k)) -
                 h * (-xm.dot(sys.QRQ() * xm) + supplied);
    }
    return res;
}

VectorXd cumulative_withdrawn(const PHSystem& sys, const Trajectory& traj) {
    check_traj(sys, traj);
    const double h = traj.grid.h();
    VectorXd w = VectorXd::Zero(traj.grid.N + 1);
    for (int k = 0; k < traj.grid.N; ++k) {
        const double supplied =
            sys.m() > 0 ? traj.controls.col(k).dot(sys.B().transpose() * (sys.Q() * traj.midpoint(k))) : 0.0;
        w[k + 1] = w[k] - h * supplied;
    }
    return w;
}

MatrixXd resample_controls(const MatrixXd& controls, const TimeGrid& coarse, const TimeGrid& fine) {
    if (controls.cols() != coarse.N) throw InvariantError("resample_controls: control/grid mismatch");
    if (std::abs(coarse.T - fine.T) > 1e-12 * coarse.T)
        throw InvariantError("resample_controls: grids must share the horizon");
    MatrixXd out(controls.rows(), fine.N);
    for (int j = 0; j < fine.N; ++j) {
        const double tm = (j + 0.5) * fine.h();
        int k = static_cast<int>(std::floor(tm / coarse.h()));
        k = std::clamp(k, 0, coarse.N - 1);
        out.col(j) = controls.col(k);
    }
    return out;
}

void write_trajectory_csv(std::ostream& os, const PHSystem& sys, const Trajectory& traj,
                          const TrajectoryCsvOptions& opts) {
    check_traj(sys, traj);
    std::vector<int> cols = opts.state_columns;
    if (cols.empty() && opts.write_all_states)
        for (int i = 0; i < sys.n(); ++i) cols.push_back(i);
    const VectorXd residuals = step_balance_residuals(sys, traj);

    os << "t";
    for (int i : cols) os << ",x_" << i + 1;
    for (int i = 0; i < sys.m(); ++i) os << ",u_" << i + 1;
    os << ",H,balance_residual\n";
    char buf[64];
    const int prec = opts.precision;
    auto put = [&](double v) {
        std::snprintf(buf, sizeof buf, ",%.*g", prec, v);
        os << buf;
    };
    for (int k = 0; k <= traj.grid.N; ++k) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, traj.grid.t(k));
        os << buf;
        for (int i : cols) put(traj.states(i, k));
        const int uk = std::min(k, traj.grid.N - 1);
        for (int i = 0; i < sys.m(); ++i) put(traj.controls(i, uk));
        put(hamiltonian(sys, traj.states.col(k)));
        put(k < traj.grid.N ? residuals[k] : 0.0);
        os << '\n';
    }
}

}  // namespace phdamp
