#pragma once

// Post-optimal analysis: switching functions and arc structure, the
// singular-arc control law, Pontryagin residuals, Riccati references,
// turnpike metrics and energy comparison tables.

#include "phdamp/integrator.hpp"
#include "phdamp/ocp.hpp"
#include "phdamp/ph_system.hpp"

#include <string>
#include <vector>

namespace phdamp {

/// s_k = B^T (Q x_mid,k + lambda_k) per interval (m x N); `interval_adjoints`
/// holds the adjoint at interval midpoints (n x N).
MatrixXd switching_function(const PHSystem& sys, const Trajectory& traj, const MatrixXd& interval_adjoints);

enum class ArcKind { Singular, Bang, Transition };

struct Arc {
    int channel = 0;
    int begin = 0;  ///< first interval
    int end = 0;    ///< one past the last interval
    ArcKind kind = ArcKind::Singular;
};

struct ArcPartition {
    MatrixXd s;           ///< m x N switching values
    double tau_s = 0.0;   ///< absolute threshold used
    int tau_len = 3;
    std::vector<std::vector<int>> singular;  ///< per interval: channels with |s_i| <= tau_s
    std::vector<std::vector<int>> active;    ///< per interval: the remaining channels
    std::vector<Arc> arcs;                   ///< maximal runs per channel, ordered by channel then time

    bool is_singular(int k, int channel) const;
    /// Arcs of one channel in time order.
    std::vector<Arc> channel_arcs(int channel) const;
};

/// tau_s = tau_rel * max_k |s_k|_inf. Singular runs shorter than tau_len
/// intervals are labelled transitions.
ArcPartition classify_arcs(const MatrixXd& s, double tau_rel = 1e-4, int tau_len = 3);

struct SingularArcControl {
    /// Solution of B_I^T (QRQ + W) B_I u_I = B_I^T v - B_I^T (QRQ + W) B_A u_A with
    /// v = 1/2 ((Q A^2 - 2 W A + 2 A^T W) x + (A^2)^T lambda), the second derivative
    /// of s_I along the optimality system.
    VectorXd u_proof;
    /// Same Gram system with v = 1/2 ((Q A^2 - 2 W A - 2 A^T W) x + (A^2)^T lambda).
    VectorXd u_proof_printed;
    /// M^{-1} B_I^T [1/2 ((Q A^2 - 2 W) x + (A^2)^T lambda) - QRQ B_A u_A], M = B_I^T QRQ B_I.
    VectorXd u_theorem;
    double gram_min_eigenvalue = 0.0;
    double theorem_gap = 0.0;  ///< |u_proof - u_theorem|_inf
};

/// Throws InvariantError if the Gram matrix is not positive definite
/// (smallest eigenvalue <= tau_pd times its largest).
SingularArcControl singular_arc_control(const PHSystem& sys, const MatrixXd& W, const VectorXd& x,
                                        const VectorXd& lambda, const VectorXd& u_active,
                                        const std::vector<int>& singular_set, const std::vector<int>& active_set,
                                        double tau_pd = 1e-12);

/// Interval controls with the alternating midpoint mode removed:
/// 1/4 u_{k-1} + 1/2 u_k + 1/4 u_{k+1}, first and last intervals unchanged.
MatrixXd filtered_controls(const MatrixXd& controls);

struct SingularArcCheck {
    int points = 0;          ///< intervals compared
    double scale = 0.0;      ///< max |u| over the horizon
    double proof_error = 0.0;    ///< max |u_proof - u_I| / scale
    double printed_error = 0.0;
    double theorem_error = 0.0;
};

/// Evaluates singular_arc_control at (x_mid, lambda_mid) on intervals lying at
/// least `margin` intervals inside a singular or bang arc of every channel, with
/// at least one singular channel, against the filtered controls.
SingularArcCheck check_singular_arcs(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints,
                                     const ArcPartition& partition, int margin = 2);

struct PontryaginResidual {
    double state_max = 0.0, state_l2 = 0.0;
    double adjoint_max = 0.0, adjoint_l2 = 0.0;
    double argmin_max = 0.0, argmin_l2 = 0.0;
};

/// Residuals of the state and adjoint equations at interior grid points:
/// central differences of the states, differences of the adjacent interval
/// adjoints, controls averaged across the grid point. The minimum condition
/// enters as a natural residual per interval.
PontryaginResidual pontryagin_residual(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints);

struct RiccatiReference {
    std::vector<MatrixXd> P;  ///< at the grid points of the coarse grid
    Trajectory trajectory;    ///< closed-loop states at grid points, controls u(t_mid)
    int substeps = 0;
};

/// Backward implicit-midpoint sweep of -P' = A^T P + P A - P B B^T P / mu + W,
/// P(T) = 0, then a closed-loop rollout u = -B^T P x / mu on the same fine grid.
RiccatiReference riccati_reference(const PHSystem& sys, const MatrixXd& W, double mu, const VectorXd& x0,
                                   const TimeGrid& grid, int substeps = 8);

/// Stabilizing solution of A^T P + P A - P B B^T P / mu + W = 0 from the stable
/// invariant subspace of the Hamiltonian matrix.
MatrixXd algebraic_riccati(const MatrixXd& A, const MatrixXd& B, const MatrixXd& W, double mu);

struct KernelProjector {
    MatrixXd projector;
    int dimension = 0;
};

/// Orthogonal projector onto ker RQ  intersected with  ker W.
KernelProjector kernel_projector(const PHSystem& sys, const MatrixXd& W, double tau_rank = 1e-10);

struct TurnpikeSample {
    double T = 0.0;
    double distance_integral = 0.0;  ///< int dist(x, kernel)^2
    double state_integral = 0.0;     ///< int |x|^2
    double control_integral = 0.0;   ///< int |u|^2
    double combined_integral = 0.0;  ///< int |x|^2 + |u|^2
    double fit_c = 0.0;
    double fit_omega = 0.0;
};

struct TurnpikeReport {
    std::vector<TurnpikeSample> samples;  ///< sorted by T
    int kernel_dimension = 0;
    double combined_variation = 0.0;   ///< relative spread over the top half of horizons
    double distance_variation = 0.0;
    bool plateau = false;               ///< combined_variation < plateau_tolerance
    double plateau_tolerance = 0.05;
    std::string note;
};

/// Needs at least three horizons. States enter at interval midpoints, controls
/// through filtered_controls. The envelope rate w is the larger decay rate of
/// the two boundary layers (log-linear least squares of |x|^2 + |u|^2 over the
/// first and last thirds, samples above 1e-12 of the peak); c is then the
/// smallest constant making
/// c (e^{-w t} + e^{-w (T - t)}) |x0| an upper bound.
TurnpikeReport turnpike_metrics(const std::vector<Trajectory>& solutions, const KernelProjector& projector,
                                double plateau_tolerance = 0.05);

enum class RowKind { Uncontrolled, Quadratic, SuppliedEnergy };

struct ComparisonRow {
    RowKind kind = RowKind::Uncontrolled;
    double mu = 0.0;
    EnergyLedger ledger;
    TimeGrid grid;

    std::string label() const;
};

/// Orders rows as uncontrolled, quadratic (decreasing mu), supplied energy.
/// Throws InvariantError if initial energies or grids differ.
std::vector<ComparisonRow> compare_costs(std::vector<ComparisonRow> rows);
std::string comparison_csv(const std::vector<ComparisonRow>& rows);
std::string comparison_text(const std::vector<ComparisonRow>& rows);

}  // namespace phdamp
