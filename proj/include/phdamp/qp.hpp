#pragma once

// Convex QP with linear equalities and variable bounds:
//
//   minimize    1/2 z^T P z + g^T z + constant
//   subject to  E z = e,   lower <= z <= upper   (entries may be +-inf)
//
// solved by ADMM operator splitting on the quasi-definite KKT system
// (cached sparse LDL^T), Ruiz equilibration, adaptive step size and an
// active-set polish.

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <string>

namespace phdamp {

struct QPProblem {
    Eigen::SparseMatrix<double> P;  ///< symmetric, full storage
    Eigen::VectorXd g;
    Eigen::SparseMatrix<double> E;
    Eigen::VectorXd e;
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;
    double constant = 0.0;

    int num_vars() const { return static_cast<int>(g.size()); }
    int num_eq() const { return static_cast<int>(e.size()); }
    double objective(const Eigen::VectorXd& z) const;
    /// Throws InvariantError on inconsistent dimensions or crossed bounds.
    void check() const;
};

struct QPProgress {
    int iteration = 0;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    double rho = 0.0;
};

struct QPSettings {
    double eps_abs = 1e-8;
    double eps_rel = 1e-8;
    int max_iter = 50000;
    double rho = 0.1;
    double sigma = 1e-6;
    double alpha = 1.6;
    bool adaptive_rho = true;
    double adaptive_rho_tolerance = 5.0;
    int check_interval = 25;
    int scaling_iterations = 15;
    bool polish = true;
    int polish_rounds = 25;
    double polish_delta = 1e-10;
    int polish_refine_iterations = 5;
    /// Invoked from the solving thread at each residual check.
    std::function<void(const QPProgress&)> on_progress;
};

struct KKTResiduals {
    double stationarity = 0.0;  ///< |Pz + g + E^T nu + w|_inf, relative
    double primal = 0.0;        ///< |Ez - e|_inf, relative
    double complementarity = 0.0;
    double bound_violation = 0.0;  ///< absolute
    double stationarity_abs = 0.0;
    double primal_abs = 0.0;

    double max_relative() const;
};

struct QPSolution {
    Eigen::VectorXd z;
    Eigen::VectorXd eq_dual;     ///< nu: stationarity Pz + g + E^T nu + w = 0
    Eigen::VectorXd bound_dual;  ///< w: > 0 at active upper bounds, < 0 at lower
    double objective = 0.0;
    int iterations = 0;
    int factorizations = 0;
    bool converged = false;
    bool polished = false;
    std::string status;
    KKTResiduals residuals;  ///< recomputed on the unscaled problem
};

/// Throws SolverError on factorization failure. Non-convergence within
/// max_iter is reported through `converged == false`.
QPSolution solve_qp(const QPProblem& qp, const QPSettings& settings = {});

/// Independent KKT check on the unscaled problem.
KKTResiduals verify_kkt(const QPProblem& qp, const QPSolution& sol);

}  // namespace phdamp
