#include "phdamp/ph_system.hpp"

#include "phdamp/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace phdamp {

namespace {

void check_square(const MatrixXd& A, Eigen::Index n, const char* name) {
    if (A.rows() != n || A.cols() != n)
        throw InvariantError(std::string("PHSystem: ") + name + " must be " + std::to_string(n) + "x" +
                             std::to_string(n));
}

MatrixXd symmetric_sqrt(const MatrixXd& S) {
    if (S.size() == 0) return S;
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(S);
    VectorXd ev = es.eigenvalues();
    const double tol = 1e-12 * std::max(ev.cwiseAbs().maxCoeff(), 0.0);
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > tol ? std::sqrt(ev[i]) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

PHSystem::PHSystem(MatrixXd J, MatrixXd R, MatrixXd Q, MatrixXd B)
    : J_(std::move(J)), R_(std::move(R)), Q_(std::move(Q)), B_(std::move(B)) {
    const Eigen::Index n = Q_.rows();
    if (n == 0) throw InvariantError("PHSystem: empty state");
    check_square(Q_, n, "Q");
    check_square(J_, n, "J");
    check_square(R_, n, "R");
    if (B_.rows() != n) throw InvariantError("PHSystem: B must have " + std::to_string(n) + " rows");

    const double jscale = std::max(1.0, J_.cwiseAbs().maxCoeff());
    if ((J_ + J_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * jscale)
        throw InvariantError("PHSystem: J is not skew-symmetric");
    const double rscale = std::max(R_.cwiseAbs().maxCoeff(), 0.0);
    if ((R_ - R_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, rscale))
        throw InvariantError("PHSystem: R is not symmetric");
    const double qscale = Q_.cwiseAbs().maxCoeff();
    if ((Q_ - Q_.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, qscale))
        throw InvariantError("PHSystem: Q is not symmetric");

    if (rscale > 0) {
        const double rmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(R_, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        if (rmin < -1e-10 * rscale)
            throw InvariantError("PHSystem: R has a negative eigenvalue " + std::to_string(rmin));
    }
    Eigen::LLT<MatrixXd> llt(Q_);
    if (llt.info() != Eigen::Success) throw InvariantError("PHSystem: Q is not positive definite");

    A_ = (J_ - R_) * Q_;
    QRQ_ = Q_ * R_ * Q_;
    QRQ_ = 0.5 * (QRQ_ + QRQ_.transpose()).eval();
    R_sqrt_ = symmetric_sqrt(R_);
}

double PHSystem::spectral_abscissa() const {
    Eigen::EigenSolver<MatrixXd> es(A_, false);
    return es.eigenvalues().real().maxCoeff();
}

PHSystem to_port_hamiltonian(const SecondOrderModel& model) {
    const int nd = model.n_dof();
    const int n = 2 * nd;
    const int m = model.n_inputs();

    Eigen::SimplicialLLT<SparseMatrix> mass_llt(model.M);
    if (mass_llt.info() != Eigen::Success)
        throw InvariantError("to_port_hamiltonian: mass matrix factorization failed");
    if (!is_positive_definite(model.K))
        throw InvariantError("to_port_hamiltonian: stiffness matrix is not positive definite");

    MatrixXd J = MatrixXd::Zero(n, n);
    J.block(0, nd, nd, nd) = -MatrixXd::Identity(nd, nd);
    J.block(nd, 0, nd, nd) = MatrixXd::Identity(nd, nd);

    MatrixXd R = MatrixXd::Zero(n, n);
    R.topLeftCorner(nd, nd) = MatrixXd(model.D);

    MatrixXd Minv = mass_llt.solve(MatrixXd::Identity(nd, nd));
    Minv = 0.5 * (Minv + Minv.transpose()).eval();
    MatrixXd Q = MatrixXd::Zero(n, n);
    Q.topLeftCorner(nd, nd) = Minv;
    Q.bottomRightCorner(nd, nd) = MatrixXd(model.K);

    MatrixXd B = MatrixXd::Zero(n, m);
    B.topRows(nd) = MatrixXd(model.F);

    PHSystem sys(std::move(J), std::move(R), std::move(Q), std::move(B));
    sys.origin_ = model;
    return sys;
}

namespace {

void check_state(const PHSystem& sys, const VectorXd& x, const char* what) {
    if (x.size() != sys.n())
        throw InvariantError(std::string(what) + ": state has length " + std::to_string(x.size()) +
                             ", expected " + std::to_string(sys.n()));
}

}  // namespace

double hamiltonian(const PHSystem& sys, const VectorXd& x) {
    check_state(sys, x, "hamiltonian");
    return 0.5 * x.dot(sys.Q() * x);
}

VectorXd output(const PHSystem& sys, const VectorXd& x) {
    check_state(sys, x, "output");
    return sys.B().transpose() * (sys.Q() * x);
}

double power_balance_residual(const PHSystem& sys, const VectorXd& x, const VectorXd& u,
                              const VectorXd& xdot) {
    check_state(sys, x, "power_balance_residual");
    check_state(sys, xdot, "power_balance_residual");
    if (u.size() != sys.m()) throw InvariantError("power_balance_residual: input has wrong length");
    const VectorXd Qx = sys.Q() * x;
    const double dissipated = (sys.R_sqrt() * Qx).squaredNorm();
    return xdot.dot(Qx) + dissipated - u.dot(sys.B().transpose() * Qx);
}

void write_triplets(std::ostream& os, const MatrixXd& A, const std::string& comment) {
    if (!comment.empty()) os << "# " << comment << '\n';
    Eigen::Index nnz = 0;
    for (Eigen::Index j = 0; j < A.cols(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            if (A(i, j) != 0.0) ++nnz;
    os << A.rows() << ' ' << A.cols() << ' ' << nnz << '\n';
    char buf[64];
    for (Eigen::Index i = 0; i < A.rows(); ++i)
        for (Eigen::Index j = 0; j < A.cols(); ++j)
            if (A(i, j) != 0.0) {
                std::snprintf(buf, sizeof buf, "%.17g", A(i, j));
                os << i << ' ' << j << ' ' << buf << '\n';
            }
}

MatrixXd read_triplets(std::istream& is) {
    std::string line;
    auto next_line = [&]() -> bool {
        while (std::getline(is, line)) {
            const auto pos = line.find_first_not_of(" \t\r");
            if (pos == std::string::npos || line[pos] == '#') continue;
            return true;
        }
        return false;
    };
    if (!next_line()) throw ConfigError("triplets: missing header");
    long rows = 0, cols = 0, nnz = 0;
    {
        std::istringstream hs(line);
        if (!(hs >> rows >> cols >> nnz) || rows < 0 || cols < 0 || nnz < 0)
            throw ConfigError("triplets: malformed header '" + line + "'");
    }
    MatrixXd A = MatrixXd::Zero(rows, cols);
    for (long k = 0; k < nnz; ++k) {
        if (!next_line()) throw ConfigError("triplets: expected " + std::to_string(nnz) + " entries");
        std::istringstream ls(line);
        long i = 0, j = 0;
        double v = 0;
        if (!(ls >> i >> j >> v) || i < 0 || j < 0 || i >= rows || j >= cols)
            throw ConfigError("triplets: malformed entry '" + line + "'");
        A(i, j) = v;
    }
    return A;
}

void export_system(const PHSystem& sys, const std::string& dir) {
    std::filesystem::create_directories(dir);
    const std::pair<const char*, const MatrixXd*> parts[] = {
        {"J", &sys.J()}, {"R", &sys.R()}, {"Q", &sys.Q()}, {"B", &sys.B()}};
    for (const auto& [name, mat] : parts) {
        std::ofstream os(std::filesystem::path(dir) / (std::string(name) + ".txt"));
        if (!os) throw ConfigError(std::string("export_system: cannot write ") + name);
        write_triplets(os, *mat, std::string("port-Hamiltonian matrix ") + name);
    }
}

PHSystem import_system(const std::string& dir) {
    auto load = [&](const char* name) {
        std::ifstream is(std::filesystem::path(dir) / (std::string(name) + ".txt"));
        if (!is) throw ConfigError(std::string("import_system: cannot read ") + name);
        return read_triplets(is);
    };
    return PHSystem(load("J"), load("R"), load("Q"), load("B"));
}

}  // namespace phdamp
