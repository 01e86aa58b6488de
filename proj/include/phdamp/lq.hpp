#pragma once

// Box-constrained, time-invariant discrete LQ problems
//
//   minimize   sum_k  1/2 x_k^T Q x_k + x_k^T S u_k + 1/2 u_k^T R u_k  +  1/2 x_N^T Q_N x_N
//   subject to x_{k+1} = A x_k + B u_k,  x_0 given,  u_min <= u_k <= u_max
//
// solved by a primal-dual active-set iteration whose inner equality-constrained
// problems are Riccati recursions. Stage factorizations below the earliest
// changed active set are cached between iterations.

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace phdamp {

struct LQProblem {
    Eigen::MatrixXd A, B;
    Eigen::MatrixXd Q, S, R;
    Eigen::MatrixXd QN;
    Eigen::VectorXd x0;
    Eigen::VectorXd u_min, u_max;
    int N = 1;

    int n() const { return static_cast<int>(A.rows()); }
    int m() const { return static_cast<int>(B.cols()); }
};

struct LQSettings {
    int max_iterations = 100;
    /// Relative tolerance for bound violations and multiplier signs.
    double tolerance = 1e-10;
    /// Primal active-set steps tried after the primal-dual iteration fails.
    int fallback_iterations = 20000;
    std::function<void(int iteration, int changes)> on_iteration;
};

struct LQSolution {
    Eigen::MatrixXd x;          ///< n x (N+1)
    Eigen::MatrixXd u;          ///< m x N
    Eigen::MatrixXd costate;    ///< n x N, multiplier of x_{k+1} = A x_k + B u_k (gradient of cost-to-go at x_{k+1})
    Eigen::MatrixXd bound_dual; ///< m x N, > 0 at upper bounds, < 0 at lower bounds
    double objective = 0.0;
    int iterations = 0;
    long riccati_stages = 0;
    bool converged = false;
    std::string status;
};

/// Throws SolverError if a reduced control Hessian is not positive definite.
LQSolution solve_box_lq(const LQProblem& lq, const LQSettings& settings = {});

}  // namespace phdamp
