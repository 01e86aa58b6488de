#include "phdamp/ocp.hpp"

#include "phdamp/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <chrono>
#include <cmath>
#include <sstream>

namespace phdamp {

using Triplet = Eigen::Triplet<double>;

std::string CostSpec::label() const {
    if (kind == CostKind::SuppliedEnergy) return "supplied-energy";
    std::ostringstream os;
    os << "quadratic(mu=" << mu << ")";
    return os.str();
}

ControlBox ControlBox::symmetric(int m, double bound) {
    return {VectorXd::Constant(m, -bound), VectorXd::Constant(m, bound)};
}

bool ControlBox::degenerate() const {
    return lower.size() == 0 || (lower.cwiseAbs().maxCoeff() == 0.0 && upper.cwiseAbs().maxCoeff() == 0.0);
}

void OCPSpec::validate() const {
    if (!sys) throw ConfigError("OCP: no system");
    const int n = sys->n();
    const int m = sys->m();
    if (W.rows() != n || W.cols() != n) throw ConfigError("OCP: W must be " + std::to_string(n) + "x" + std::to_string(n));
    if (x0.size() != n) throw ConfigError("OCP: x0 has length " + std::to_string(x0.size()));
    if (box.lower.size() != m || box.upper.size() != m) throw ConfigError("OCP: control box must have m entries");
    for (int i = 0; i < m; ++i)
        if (!(box.lower[i] <= 0.0 && box.upper[i] >= 0.0))
            throw ConfigError("OCP: control box must contain 0 (channel " + std::to_string(i + 1) + ")");
    if (cost.kind == CostKind::QuadraticControl && !(cost.mu > 0.0))
        throw ConfigError("OCP: quadratic control cost needs mu > 0");
    const double wscale = W.cwiseAbs().maxCoeff();
    if ((W - W.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, wscale))
        throw InvariantError("OCP: W is not symmetric");
    if (wscale > 0) {
        const double wmin = Eigen::SelfAdjointEigenSolver<MatrixXd>(W, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
        if (wmin < -1e-10 * wscale) throw InvariantError("OCP: W has a negative eigenvalue " + std::to_string(wmin));
    }
}

namespace {

SparseMatrix to_sparse(const MatrixXd& A, double rel_prune = 0.0) {
    const double tol = rel_prune * (A.size() ? A.cwiseAbs().maxCoeff() : 0.0);
    std::vector<Triplet> trip;
    for (Eigen::Index j = 0; j < A.cols(); ++j)
        for (Eigen::Index i = 0; i < A.rows(); ++i)
            if (A(i, j) != 0.0 && std::abs(A(i, j)) > tol) trip.emplace_back(i, j, A(i, j));
    SparseMatrix S(A.rows(), A.cols());
    S.setFromTriplets(trip.begin(), trip.end());
    return S;
}

void add_block(std::vector<Triplet>& trip, const SparseMatrix& S, int r0, int c0, double scale) {
    for (int j = 0; j < S.outerSize(); ++j)
        for (SparseMatrix::InnerIterator it(S, j); it; ++it)
            trip.emplace_back(r0 + it.row(), c0 + j, scale * it.value());
}

/// Collocation pieces in solver coordinates: rows  E_s (s_{k+1} - s_k) - h A_s s_mid - h B u_k.
struct Coordinates {
    bool velocity = false;
    SparseMatrix T;    ///< x = T s
    SparseMatrix Es;   ///< row operator on s increments
    SparseMatrix As;   ///< A T
    SparseMatrix Ws;   ///< T^T W T
    SparseMatrix Ds;   ///< T^T QRQ T
    SparseMatrix Hs;   ///< T^T Q T
};

Coordinates coordinates(const OCPSpec& spec) {
    const PHSystem& sys = *spec.sys;
    Coordinates c;
    const int n = sys.n();
    if (sys.origin()) {
        const SecondOrderModel& mo = *sys.origin();
        const int nd = mo.n_dof();
        c.velocity = true;
        std::vector<Triplet> t, a, h, d;
        add_block(t, mo.M, 0, 0, 1.0);
        for (int i = 0; i < nd; ++i) t.emplace_back(nd + i, nd + i, 1.0);
        c.T.resize(n, n);
        c.T.setFromTriplets(t.begin(), t.end());
        c.Es = c.T;
        add_block(a, mo.D, 0, 0, -1.0);
        add_block(a, mo.K, 0, nd, -1.0);
        for (int i = 0; i < nd; ++i) a.emplace_back(nd + i, i, 1.0);
        c.As.resize(n, n);
        c.As.setFromTriplets(a.begin(), a.end());
        add_block(h, mo.M, 0, 0, 1.0);
        add_block(h, mo.K, nd, nd, 1.0);
        c.Hs.resize(n, n);
        c.Hs.setFromTriplets(h.begin(), h.end());
        add_block(d, mo.D, 0, 0, 1.0);
        c.Ds.resize(n, n);
        c.Ds.setFromTriplets(d.begin(), d.end());
        const MatrixXd Td(c.T);
        MatrixXd Wd = Td.transpose() * spec.W * Td;
        Wd = 0.5 * (Wd + Wd.transpose()).eval();
        c.Ws = to_sparse(Wd, 1e-12);
    } else {
        SparseMatrix I(n, n);
        I.setIdentity();
        c.T = I;
        c.Es = I;
        c.As = to_sparse(sys.A());
        c.Hs = to_sparse(sys.Q());
        c.Ds = to_sparse(sys.QRQ());
        c.Ws = to_sparse(spec.W);
    }
    return c;
}

VectorXd to_solver_coordinates(const OCPSpec& spec, const Coordinates& c, const VectorXd& x) {
    if (!c.velocity) return x;
    const SecondOrderModel& mo = *spec.sys->origin();
    const int nd = mo.n_dof();
    Eigen::SimplicialLLT<SparseMatrix> llt(mo.M);
    VectorXd s(x.size());
    VectorXd v = llt.solve(x.head(nd));
    for (int it = 0; it < 3; ++it) v += llt.solve(x.head(nd) - mo.M * v);
    s.head(nd) = v;
    s.tail(nd) = x.tail(nd);
    return s;
}

}  // namespace

Transcription transcribe(const OCPSpec& spec) {
    spec.validate();
    const PHSystem& sys = *spec.sys;
    const Coordinates c = coordinates(spec);
    const int n = sys.n();
    const int m = sys.m();
    const int N = spec.grid.N;
    const double h = spec.grid.h();
    const bool supplied = spec.cost.kind == CostKind::SuppliedEnergy;

    Transcription tr;
    tr.n = n;
    tr.m = m;
    tr.N = N;
    tr.velocity_coordinates = c.velocity;
    tr.T = c.T;
    const int nz = N * (n + m);
    QPProblem& qp = tr.qp;

    // Stage weight in solver coordinates.
    SparseMatrix Wt = c.Ws;
    if (supplied) Wt = (c.Ws + c.Ds).pruned();

    const VectorXd s0 = to_solver_coordinates(spec, c, spec.x0);

    std::vector<Triplet> ptrip;
    for (int k = 1; k <= N; ++k) {
        const int ok = tr.state_offset(k);
        add_block(ptrip, Wt, ok, ok, k < N ? h : 0.5 * h);
        if (k < N) {
            add_block(ptrip, Wt, ok, tr.state_offset(k + 1), 0.5 * h);
            add_block(ptrip, Wt, tr.state_offset(k + 1), ok, 0.5 * h);
        }
    }
    if (supplied) add_block(ptrip, c.Hs, tr.state_offset(N), tr.state_offset(N), 1.0);
    if (!supplied)
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) ptrip.emplace_back(tr.control_offset(k) + i, tr.control_offset(k) + i, 2.0 * h * spec.cost.mu);
    qp.P.resize(nz, nz);
    qp.P.setFromTriplets(ptrip.begin(), ptrip.end());

    qp.g = VectorXd::Zero(nz);
    const VectorXd Wts0 = Wt * s0;
    qp.g.segment(tr.state_offset(1), n) = 0.5 * h * Wts0;
    qp.constant = 0.25 * h * s0.dot(Wts0);

    const SparseMatrix next = (c.Es - 0.5 * h * c.As).pruned();
    const SparseMatrix prev = (-(c.Es + 0.5 * h * c.As)).pruned();
    const SparseMatrix Bs = to_sparse(sys.B());
    std::vector<Triplet> etrip;
    for (int k = 0; k < N; ++k) {
        const int row = k * n;
        add_block(etrip, next, row, tr.state_offset(k + 1), 1.0);
        if (k > 0) add_block(etrip, prev, row, tr.state_offset(k), 1.0);
        add_block(etrip, Bs, row, tr.control_offset(k), -h);
    }
    qp.E.resize(N * n, nz);
    qp.E.setFromTriplets(etrip.begin(), etrip.end());
    qp.e = VectorXd::Zero(N * n);
    qp.e.head(n) = -(prev * s0);

    const double inf = std::numeric_limits<double>::infinity();
    qp.lower = VectorXd::Constant(nz, -inf);
    qp.upper = VectorXd::Constant(nz, inf);
    for (int k = 0; k < N; ++k) {
        qp.lower.segment(tr.control_offset(k), m) = spec.box.lower;
        qp.upper.segment(tr.control_offset(k), m) = spec.box.upper;
    }
    return tr;
}

double direct_cost(const OCPSpec& spec, const Trajectory& traj) {
    const PHSystem& sys = *spec.sys;
    const double h = traj.grid.h();
    double J = 0.0;
    for (int k = 0; k < traj.grid.N; ++k) {
        const VectorXd xm = traj.midpoint(k);
        J += h * xm.dot(spec.W * xm);
        const VectorXd u = traj.controls.col(k);
        if (spec.cost.kind == CostKind::QuadraticControl) J += h * spec.cost.mu * u.squaredNorm();
        else if (sys.m() > 0) J += h * u.dot(sys.B().transpose() * (sys.Q() * xm));
    }
    return J;
}

OCPSolution extract_solution(const QPSolution& qs, const Transcription& tr, const OCPSpec& spec) {
    if (!qs.converged) throw SolverError("OCP: QP solver did not converge (" + qs.status + ")");
    const PHSystem& sys = *spec.sys;
    const int n = tr.n;
    const int m = tr.m;
    const int N = tr.N;

    OCPSolution out;
    Trajectory& traj = out.trajectory;
    traj.grid = spec.grid;
    traj.states.resize(n, N + 1);
    traj.controls.resize(m, N);
    traj.states.col(0) = spec.x0;
    for (int k = 1; k <= N; ++k) traj.states.col(k) = tr.T * qs.z.segment(tr.state_offset(k), n);
    for (int k = 0; k < N; ++k) traj.controls.col(k) = qs.z.segment(tr.control_offset(k), m);

    // Rows are the x-dynamics multiplied by h, so the interval adjoint is -nu.
    out.interval_adjoints.resize(n, N);
    for (int k = 0; k < N; ++k) {
        VectorXd lam = -qs.eq_dual.segment(k * n, n);
        if (spec.cost.kind == CostKind::SuppliedEnergy) lam -= sys.Q() * traj.midpoint(k);
        out.interval_adjoints.col(k) = lam;
    }
    MatrixXd grid_adj = MatrixXd::Zero(n, N + 1);
    for (int k = 1; k < N; ++k)
        grid_adj.col(k) = 0.5 * (out.interval_adjoints.col(k - 1) + out.interval_adjoints.col(k));
    grid_adj.col(0) = N > 1 ? MatrixXd(1.5 * out.interval_adjoints.col(0) - 0.5 * out.interval_adjoints.col(1))
                            : MatrixXd(out.interval_adjoints.col(0));
    traj.adjoints = grid_adj;

    out.objective = qs.objective;
    out.direct_objective = direct_cost(spec, traj);
    out.ledger = energy_audit(sys, traj);
    out.kkt = qs.residuals;
    out.iterations = qs.iterations;
    out.factorizations = qs.factorizations;
    out.polished = qs.polished;
    out.status = qs.status;

    const double h = spec.grid.h();
    for (int k = 0; k < N; ++k) {
        const VectorXd r = traj.states.col(k + 1) - traj.states.col(k) -
                           h * (sys.A() * traj.midpoint(k) + sys.B() * traj.controls.col(k));
        const double scale = std::max({1.0, traj.states.col(k).cwiseAbs().maxCoeff(),
                                       traj.states.col(k + 1).cwiseAbs().maxCoeff()});
        out.dynamics_residual = std::max(out.dynamics_residual, r.cwiseAbs().maxCoeff() / scale);
        for (int i = 0; i < m; ++i)
            out.box_violation = std::max({out.box_violation, spec.box.lower[i] - traj.controls(i, k),
                                          traj.controls(i, k) - spec.box.upper[i]});
    }
    return out;
}

QPSolution solve_transcription_riccati(const OCPSpec& spec, const Transcription& tr, const LQSettings& settings) {
    const PHSystem& sys = *spec.sys;
    const int n = tr.n;
    const int m = tr.m;
    const int N = tr.N;
    const double h = spec.grid.h();
    const bool supplied = spec.cost.kind == CostKind::SuppliedEnergy;
    const MatrixXd I = MatrixXd::Identity(n, n);

    // Energy coordinates xi = L^T x with Q = L L^T, so that H = |xi|^2 / 2.
    const Eigen::LLT<MatrixXd> qllt(sys.Q());
    if (qllt.info() != Eigen::Success) throw InvariantError("OCP: Q is not positive definite");
    const MatrixXd L = qllt.matrixL();
    const MatrixXd Lt = L.transpose();
    const MatrixXd Lt_inv = L.triangularView<Eigen::Lower>().solve(I).transpose();

    const MatrixXd implicit_part = I - 0.5 * h * sys.A();
    const Eigen::PartialPivLU<MatrixXd> lu(implicit_part);
    const MatrixXd Ad = lu.solve(I + 0.5 * h * sys.A());
    const MatrixXd Bd = lu.solve(h * sys.B());

    MatrixXd Wt = spec.W;
    if (supplied) Wt += sys.QRQ();
    MatrixXd Wxi = L.triangularView<Eigen::Lower>().solve(
        L.triangularView<Eigen::Lower>().solve(Wt).transpose());
    Wxi = 0.5 * (Wxi + Wxi.transpose()).eval();

    LQProblem lq;
    lq.N = N;
    lq.A = Lt * Ad * Lt_inv;
    lq.B = Lt * Bd;
    const MatrixXd G = 0.5 * (I + lq.A);
    const MatrixXd Hm = 0.5 * lq.B;
    const MatrixXd WG = Wxi * G;
    lq.Q = 2.0 * h * G.transpose() * WG;
    lq.Q = 0.5 * (lq.Q + lq.Q.transpose()).eval();
    lq.S = 2.0 * h * WG.transpose() * Hm;
    lq.R = 2.0 * h * Hm.transpose() * Wxi * Hm;
    if (!supplied) lq.R += 2.0 * h * spec.cost.mu * MatrixXd::Identity(m, m);
    lq.R = 0.5 * (lq.R + lq.R.transpose()).eval();
    lq.QN = supplied ? I : MatrixXd::Zero(n, n);
    lq.x0 = Lt * spec.x0;
    lq.u_min = spec.box.lower;
    lq.u_max = spec.box.upper;

    const LQSolution ls = solve_box_lq(lq, settings);

    const Coordinates c = coordinates(spec);
    QPSolution qs;
    qs.z = VectorXd::Zero(tr.qp.num_vars());
    qs.eq_dual = VectorXd::Zero(tr.qp.num_eq());
    qs.bound_dual = VectorXd::Zero(tr.qp.num_vars());
    // States from a forward rollout of the controls in the original
    // coordinates; mapping the energy-coordinate states back loses digits
    // when Q mixes very different scales.
    const MidpointStepper stepper(sys, h);
    VectorXd x = spec.x0;
    for (int k = 0; k < N; ++k) {
        x = stepper.step(x, ls.u.col(k));
        qs.z.segment(tr.state_offset(k + 1), n) = to_solver_coordinates(spec, c, x);
        qs.z.segment(tr.control_offset(k), m) = ls.u.col(k);
    }

    // Multipliers consistent with that primal: stationarity in the states,
    // E_x^T nu = -(P z + g)_x (block triangular), then bound multipliers on
    // the controls the active-set solver left on a bound.
    const VectorXd grad = tr.qp.P * qs.z + tr.qp.g;
    const int nx = N * n;
    const SparseMatrix nextT = SparseMatrix((c.Es - 0.5 * h * c.As).transpose());
    const SparseMatrix prevT = SparseMatrix((-(c.Es + 0.5 * h * c.As)).transpose());
    Eigen::SparseLU<SparseMatrix> elu;
    elu.compute(nextT);
    if (elu.info() != Eigen::Success) throw SolverError("OCP: dynamics rows are singular");
    VectorXd rhs = -grad.segment(tr.state_offset(N), n);
    for (int k = N - 1; k >= 0; --k) {
        qs.eq_dual.segment(k * n, n) = elu.solve(rhs);
        if (k > 0) rhs = -grad.segment(tr.state_offset(k), n) - prevT * qs.eq_dual.segment(k * n, n);
    }
    const VectorXd wu = -(grad.tail(N * m) + SparseMatrix(tr.qp.E.rightCols(N * m)).transpose() * qs.eq_dual);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < m; ++i)
            if (ls.bound_dual(i, k) != 0.0) {
                const int j = tr.control_offset(k) + i;
                qs.bound_dual[j] = wu[j - nx];
            }
    qs.objective = tr.qp.objective(qs.z);
    qs.iterations = ls.iterations;
    qs.factorizations = static_cast<int>(ls.riccati_stages);
    qs.converged = ls.converged;
    qs.status = ls.status;
    qs.residuals = verify_kkt(tr.qp, qs);
    return qs;
}

OCPSolution solve_ocp(const OCPSpec& spec, const OCPSolverSettings& settings) {
    const auto t0 = std::chrono::steady_clock::now();
    const Transcription tr = transcribe(spec);
    const QPSolution qs = settings.backend == OCPBackend::Riccati
                              ? solve_transcription_riccati(spec, tr, settings.lq)
                              : solve_qp(tr.qp, settings.qp);
    OCPSolution sol = extract_solution(qs, tr, spec);
    sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (sol.kkt.max_relative() > settings.kkt_tolerance || sol.box_violation > settings.box_tolerance) {
        std::ostringstream msg;
        msg << "OCP: KKT certificate failed (stationarity " << sol.kkt.stationarity << ", primal " << sol.kkt.primal
            << ", complementarity " << sol.kkt.complementarity << ", box violation " << sol.box_violation << ")";
        throw SolverError(msg.str());
    }
    return sol;
}

}  // namespace phdamp
