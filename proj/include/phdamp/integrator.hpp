#pragma once

// Implicit midpoint simulation of port-Hamiltonian systems and the discrete
// energy ledger.

#include "phdamp/ph_system.hpp"

#include <Eigen/SparseLU>

#include <iosfwd>
#include <memory>
#include <optional>
#include <vector>

namespace phdamp {

struct TimeGrid {
    double T = 1.0;
    int N = 300;

    TimeGrid() = default;
    TimeGrid(double horizon, int intervals);

    double h() const { return T / N; }
    double t(int k) const { return k * h(); }
};

/// States at grid points (columns 0..N), controls held constant on each
/// interval (columns 0..N-1), optional adjoints at grid points.
struct Trajectory {
    TimeGrid grid;
    MatrixXd states;    ///< n x (N+1)
    MatrixXd controls;  ///< m x N
    std::optional<MatrixXd> adjoints;  ///< n x (N+1)

    VectorXd midpoint(int k) const { return 0.5 * (states.col(k) + states.col(k + 1)); }
};

struct EnergyLedger {
    double withdrawn = 0.0;   ///< -sum h u_k^T y_mid,k
    double dissipated = 0.0;  ///< sum h |R^{1/2} Q x_mid,k|^2
    double remaining = 0.0;   ///< H(x_N)
    double initial = 0.0;     ///< H(x_0)
    double balance_residual = 0.0;  ///< |initial - remaining - dissipated - withdrawn|
};

/// Cached resolvent (I - h/2 A) for repeated midpoint steps at fixed h.
class MidpointStepper {
public:
    /// Throws SolverError if the resolvent is singular (2/h an eigenvalue of A).
    MidpointStepper(const PHSystem& sys, double h);

    VectorXd step(const VectorXd& x, const VectorXd& u) const;
    double h() const { return h_; }

private:
    double h_;
    MatrixXd explicit_part_;  ///< I + h/2 A
    MatrixXd input_part_;     ///< h B
    std::shared_ptr<Eigen::SparseLU<SparseMatrix>> lu_;
};

/// Solves (x_next - x)/h = A (x + x_next)/2 + B u.
VectorXd midpoint_step(const PHSystem& sys, const VectorXd& x, const VectorXd& u, double h);

/// Sequential midpoint steps with one resolvent factorization.
Trajectory simulate(const PHSystem& sys, const VectorXd& x0, const MatrixXd& controls, const TimeGrid& grid);

EnergyLedger energy_audit(const PHSystem& sys, const Trajectory& traj);

/// Per-step balance residuals H(x_{k+1}) - H(x_k) - h(-|R^{1/2}Q x_mid|^2 + u_k^T y_mid).
VectorXd step_balance_residuals(const PHSystem& sys, const Trajectory& traj);

/// Cumulative withdrawn energy -int_0^{t_k} u^T y at every grid point.
VectorXd cumulative_withdrawn(const PHSystem& sys, const Trajectory& traj);

/// Zero-order hold resampling of piecewise-constant controls onto a finer
/// grid; each fine interval takes the coarse control active at its midpoint.
MatrixXd resample_controls(const MatrixXd& controls, const TimeGrid& coarse, const TimeGrid& fine);

struct TrajectoryCsvOptions {
    std::vector<int> state_columns;  ///< subset of x to write; empty = all
    bool write_all_states = true;
    int precision = 12;  ///< significant digits
};

/// Columns: t, x_i..., u_1..u_m, H, balance_residual. Controls of interval k
/// are written on row k (the last row repeats u_{N-1}); the residual of step
/// k -> k+1 is on row k (0 on the last row).
void write_trajectory_csv(std::ostream& os, const PHSystem& sys, const Trajectory& traj,
                          const TrajectoryCsvOptions& opts = {});

}  // namespace phdamp
