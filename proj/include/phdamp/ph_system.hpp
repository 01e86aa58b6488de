#pragma once

// Linear port-Hamiltonian systems  x' = (J - R) Q x + B u,  y = B^T Q x.

#include "phdamp/structure.hpp"

#include <Eigen/Dense>

#include <iosfwd>
#include <optional>
#include <string>

namespace phdamp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

class PHSystem {
public:
    /// Validates skew J, symmetric PSD R, symmetric PD Q; throws InvariantError.
    PHSystem(MatrixXd J, MatrixXd R, MatrixXd Q, MatrixXd B);

    const MatrixXd& J() const { return J_; }
    const MatrixXd& R() const { return R_; }
    const MatrixXd& Q() const { return Q_; }
    const MatrixXd& B() const { return B_; }
    /// (J - R) Q
    const MatrixXd& A() const { return A_; }
    /// Q R Q, the dissipated-power form: |R^{1/2} Q x|^2 = x^T QRQ x.
    const MatrixXd& QRQ() const { return QRQ_; }
    /// Symmetric square root of R (eigenvalues below 1e-12 |R| clipped to 0).
    const MatrixXd& R_sqrt() const { return R_sqrt_; }

    int n() const { return static_cast<int>(Q_.rows()); }
    int m() const { return static_cast<int>(B_.cols()); }

    /// Present when the system was lifted from a second-order model; the state
    /// is then ordered (momenta p = M q', displacements q).
    const std::optional<SecondOrderModel>& origin() const { return origin_; }
    int n_dof() const { return origin_ ? origin_->n_dof() : n() / 2; }

    /// Largest real part of eig(A).
    double spectral_abscissa() const;

private:
    friend PHSystem to_port_hamiltonian(const SecondOrderModel& model);

    MatrixXd J_, R_, Q_, B_, A_, QRQ_, R_sqrt_;
    std::optional<SecondOrderModel> origin_;
};

/// J = [[0, -I], [I, 0]], R = diag(D, 0), Q = diag(M^{-1}, K), B = [F_u; 0].
PHSystem to_port_hamiltonian(const SecondOrderModel& model);

/// H(x) = 1/2 x^T Q x
double hamiltonian(const PHSystem& sys, const VectorXd& x);

/// y = B^T Q x
VectorXd output(const PHSystem& sys, const VectorXd& x);

/// x'^T Q x + |R^{1/2} Q x|^2 - u^T y; zero along exact trajectories.
double power_balance_residual(const PHSystem& sys, const VectorXd& x, const VectorXd& u,
                              const VectorXd& xdot);

// Sparse triplet text format:
//   # comment lines
//   <rows> <cols> <nnz>
//   <row> <col> <value>      (0-based, one entry per line, %.17g)
void write_triplets(std::ostream& os, const MatrixXd& A, const std::string& comment = {});
MatrixXd read_triplets(std::istream& is);

/// Writes J.txt, R.txt, Q.txt, B.txt into `dir`.
void export_system(const PHSystem& sys, const std::string& dir);
PHSystem import_system(const std::string& dir);

}  // namespace phdamp
