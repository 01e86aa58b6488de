#pragma once

// Optimal damping problems on port-Hamiltonian systems, transcribed by
// implicit-midpoint collocation into sparse convex QPs.
//
//   QuadraticControl(mu):  min  int x^T W x + mu |u|^2 dt
//   SuppliedEnergy:        min  int x^T W x + u^T y dt
//
// subject to the pH dynamics, x(0) = x0 and a control box.

#include "phdamp/integrator.hpp"
#include "phdamp/lq.hpp"
#include "phdamp/ph_system.hpp"
#include "phdamp/qp.hpp"

#include <memory>
#include <string>

namespace phdamp {

enum class CostKind { QuadraticControl, SuppliedEnergy };

struct CostSpec {
    CostKind kind = CostKind::SuppliedEnergy;
    double mu = 0.0;  ///< QuadraticControl only

    static CostSpec quadratic(double mu) { return {CostKind::QuadraticControl, mu}; }
    static CostSpec supplied_energy() { return {CostKind::SuppliedEnergy, 0.0}; }
    std::string label() const;
};

struct ControlBox {
    VectorXd lower;
    VectorXd upper;

    static ControlBox symmetric(int m, double bound);
    bool degenerate() const;  ///< every channel pinned to zero
};

struct OCPSpec {
    std::shared_ptr<const PHSystem> sys;
    MatrixXd W;
    CostSpec cost;
    ControlBox box;
    VectorXd x0;
    TimeGrid grid;

    /// Throws ConfigError / InvariantError on inconsistent data.
    void validate() const;
};

/// Maps solver coordinates s to states x = T s. Lifted second-order systems
/// are solved in (velocity, displacement) coordinates so that every block of
/// the QP stays sparse; T = diag(M, I). Other systems use T = I.
struct Transcription {
    QPProblem qp;
    int n = 0;
    int m = 0;
    int N = 0;
    bool velocity_coordinates = false;
    SparseMatrix T;  ///< n x n

    int state_offset(int k) const { return (k - 1) * n; }  ///< k = 1..N
    int control_offset(int k) const { return N * n + k * m; }  ///< k = 0..N-1
};

Transcription transcribe(const OCPSpec& spec);

struct OCPSolution {
    Trajectory trajectory;       ///< x*, u* and adjoints at grid points
    MatrixXd interval_adjoints;  ///< n x N, adjoint at interval midpoints
    double objective = 0.0;      ///< value of the solved QP (reformulated form for SuppliedEnergy)
    double direct_objective = 0.0;  ///< direct midpoint quadrature of the stated cost
    EnergyLedger ledger;
    KKTResiduals kkt;
    double dynamics_residual = 0.0;  ///< max_k |x_{k+1} - x_k - h (A x_mid + B u_k)| / max(1, |x|)
    double box_violation = 0.0;
    int iterations = 0;
    int factorizations = 0;
    bool polished = false;
    std::string status;
    double solve_seconds = 0.0;
};

/// Throws SolverError if the QP did not converge.
OCPSolution extract_solution(const QPSolution& qp_solution, const Transcription& tr, const OCPSpec& spec);

enum class OCPBackend {
    /// Active-set iteration on Riccati-factored stage problems (energy coordinates).
    Riccati,
    /// Operator splitting on the sparse transcription (small problems).
    SparseADMM,
};

struct OCPSolverSettings {
    OCPBackend backend = OCPBackend::Riccati;
    QPSettings qp;
    LQSettings lq;
    /// Bound on the independently recomputed relative KKT residuals.
    double kkt_tolerance = 1e-6;
    double box_tolerance = 1e-9;
};

/// Solves the QP, maps the result onto the sparse transcription and
/// re-verifies the KKT conditions there. Throws SolverError when the solver
/// fails or the certificate exceeds the tolerances.
OCPSolution solve_ocp(const OCPSpec& spec, const OCPSolverSettings& settings = {});

/// Riccati backend alone, returning primal/dual data in transcription layout.
QPSolution solve_transcription_riccati(const OCPSpec& spec, const Transcription& tr, const LQSettings& settings = {});

/// Direct midpoint quadrature of the cost along a trajectory:
/// sum_k h (x_mid^T W x_mid + mu |u_k|^2)  or  sum_k h (x_mid^T W x_mid + u_k^T y_mid).
double direct_cost(const OCPSpec& spec, const Trajectory& traj);

}  // namespace phdamp
