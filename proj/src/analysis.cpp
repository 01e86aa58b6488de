#include "phdamp/analysis.hpp"

#include "phdamp/error.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace phdamp {

MatrixXd switching_function(const PHSystem& sys, const Trajectory& traj, const MatrixXd& interval_adjoints) {
    const int N = traj.grid.N;
    if (traj.states.rows() != sys.n() || traj.states.cols() != N + 1 || interval_adjoints.rows() != sys.n() ||
        interval_adjoints.cols() != N)
        throw InvariantError("switching_function: trajectory and adjoint grids do not match");
    MatrixXd s(sys.m(), N);
    for (int k = 0; k < N; ++k)
        s.col(k) = sys.B().transpose() * (sys.Q() * traj.midpoint(k) + interval_adjoints.col(k));
    return s;
}

bool ArcPartition::is_singular(int k, int channel) const {
    const auto& v = singular[k];
    return std::find(v.begin(), v.end(), channel) != v.end();
}

std::vector<Arc> ArcPartition::channel_arcs(int channel) const {
    std::vector<Arc> out;
    for (const Arc& a : arcs)
        if (a.channel == channel) out.push_back(a);
    return out;
}

ArcPartition classify_arcs(const MatrixXd& s, double tau_rel, int tau_len) {
    ArcPartition part;
    const int m = static_cast<int>(s.rows());
    const int N = static_cast<int>(s.cols());
    part.s = s;
    part.tau_len = tau_len;
    part.tau_s = s.size() ? tau_rel * s.cwiseAbs().maxCoeff() : 0.0;
    part.singular.resize(N);
    part.active.resize(N);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < m; ++i)
            (std::abs(s(i, k)) <= part.tau_s ? part.singular[k] : part.active[k]).push_back(i);

    for (int i = 0; i < m; ++i) {
        int k = 0;
        while (k < N) {
            const bool sing = std::abs(s(i, k)) <= part.tau_s;
            int e = k;
            while (e < N && (std::abs(s(i, e)) <= part.tau_s) == sing) ++e;
            ArcKind kind = ArcKind::Bang;
            if (sing) kind = e - k >= tau_len ? ArcKind::Singular : ArcKind::Transition;
            part.arcs.push_back({i, k, e, kind});
            k = e;
        }
    }
    return part;
}

namespace {

MatrixXd select_columns(const MatrixXd& B, const std::vector<int>& idx) {
    MatrixXd out(B.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = B.col(idx[j]);
    return out;
}

MatrixXd psd_sqrt(const MatrixXd& S) {
    if (S.size() == 0 || S.cwiseAbs().maxCoeff() == 0.0) return MatrixXd::Zero(S.rows(), S.cols());
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (S + S.transpose()));
    VectorXd ev = es.eigenvalues();
    for (Eigen::Index i = 0; i < ev.size(); ++i) ev[i] = ev[i] > 0 ? std::sqrt(ev[i]) : 0.0;
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

SingularArcControl singular_arc_control(const PHSystem& sys, const MatrixXd& W, const VectorXd& x,
                                        const VectorXd& lambda, const VectorXd& u_active,
                                        const std::vector<int>& singular_set, const std::vector<int>& active_set,
                                        double tau_pd) {
    if (singular_set.empty()) throw InvariantError("singular_arc_control: empty singular index set");
    if (static_cast<int>(active_set.size()) != u_active.size())
        throw InvariantError("singular_arc_control: u_active does not match the active index set");
    if (x.size() != sys.n() || lambda.size() != sys.n() || W.rows() != sys.n())
        throw InvariantError("singular_arc_control: dimension mismatch");

    const MatrixXd& Q = sys.Q();
    const MatrixXd& A = sys.A();
    const MatrixXd A2 = A * A;
    const MatrixXd BI = select_columns(sys.B(), singular_set);
    const MatrixXd BA = select_columns(sys.B(), active_set);
    const MatrixXd QRQW = sys.QRQ() + W;

    SingularArcControl out;
    const MatrixXd gram = BI.transpose() * QRQW * BI;
    const VectorXd gev = Eigen::SelfAdjointEigenSolver<MatrixXd>(gram, Eigen::EigenvaluesOnly).eigenvalues();
    out.gram_min_eigenvalue = gev.minCoeff();
    if (!(out.gram_min_eigenvalue > tau_pd * std::max(gev.maxCoeff(), 0.0)) || gev.maxCoeff() <= 0.0) {
        std::ostringstream msg;
        msg << "singular_arc_control: B_I^T (QRQ + W) B_I is not positive definite (smallest eigenvalue "
            << out.gram_min_eigenvalue << ")";
        throw InvariantError(msg.str());
    }
    const Eigen::LDLT<MatrixXd> gram_ldlt(gram);
    const VectorXd coupling = BA.cols() ? VectorXd(BI.transpose() * QRQW * BA * u_active) : VectorXd::Zero(BI.cols());
    const VectorXd adj = A2.transpose() * lambda;

    const VectorXd v_derived = 0.5 * ((Q * A2 - 2.0 * W * A + 2.0 * A.transpose() * W) * x + adj);
    const VectorXd v_printed = 0.5 * ((Q * A2 - 2.0 * W * A - 2.0 * A.transpose() * W) * x + adj);
    out.u_proof = gram_ldlt.solve(BI.transpose() * v_derived - coupling);
    out.u_proof_printed = gram_ldlt.solve(BI.transpose() * v_printed - coupling);

    const MatrixXd M = BI.transpose() * sys.QRQ() * BI;
    const VectorXd v_theorem = 0.5 * ((Q * A2 - 2.0 * W) * x + adj);
    VectorXd rhs = v_theorem;
    if (BA.cols()) rhs -= sys.QRQ() * BA * u_active;
    const Eigen::LDLT<MatrixXd> m_ldlt(M);
    out.u_theorem = m_ldlt.solve(BI.transpose() * rhs);
    out.theorem_gap = (out.u_proof - out.u_theorem).cwiseAbs().maxCoeff();
    return out;
}

MatrixXd filtered_controls(const MatrixXd& controls) {
    MatrixXd out = controls;
    for (Eigen::Index k = 1; k + 1 < controls.cols(); ++k)
        out.col(k) = 0.25 * controls.col(k - 1) + 0.5 * controls.col(k) + 0.25 * controls.col(k + 1);
    return out;
}

SingularArcCheck check_singular_arcs(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints,
                                     const ArcPartition& partition, int margin) {
    const PHSystem& sys = *spec.sys;
    const int m = sys.m();
    const int N = traj.grid.N;
    const MatrixXd ubar = filtered_controls(traj.controls);
    SingularArcCheck out;
    out.scale = traj.controls.size() ? traj.controls.cwiseAbs().maxCoeff() : 0.0;
    if (out.scale == 0.0) return out;
    for (int k = 1; k + 1 < N; ++k) {
        std::vector<int> I, A;
        bool inside = true;
        for (int i = 0; i < m && inside; ++i) {
            inside = false;
            for (const Arc& a : partition.channel_arcs(i)) {
                if (a.kind == ArcKind::Transition || k < a.begin + margin || k >= a.end - margin) continue;
                (a.kind == ArcKind::Singular ? I : A).push_back(i);
                inside = true;
            }
        }
        if (!inside || I.empty()) continue;
        VectorXd ua(static_cast<Eigen::Index>(A.size()));
        for (std::size_t j = 0; j < A.size(); ++j) ua[static_cast<Eigen::Index>(j)] = traj.controls(A[j], k);
        const SingularArcControl sc =
            singular_arc_control(sys, spec.W, traj.midpoint(k), interval_adjoints.col(k), ua, I, A);
        for (std::size_t j = 0; j < I.size(); ++j) {
            const double u = ubar(I[j], k);
            const auto e = static_cast<Eigen::Index>(j);
            out.proof_error = std::max(out.proof_error, std::abs(sc.u_proof[e] - u) / out.scale);
            out.printed_error = std::max(out.printed_error, std::abs(sc.u_proof_printed[e] - u) / out.scale);
            out.theorem_error = std::max(out.theorem_error, std::abs(sc.u_theorem[e] - u) / out.scale);
        }
        ++out.points;
    }
    return out;
}

PontryaginResidual pontryagin_residual(const OCPSpec& spec, const Trajectory& traj, const MatrixXd& interval_adjoints) {
    const PHSystem& sys = *spec.sys;
    const int N = traj.grid.N;
    const int n = sys.n();
    const int m = sys.m();
    const double h = traj.grid.h();
    if (interval_adjoints.rows() != n || interval_adjoints.cols() != N || traj.states.cols() != N + 1)
        throw InvariantError("pontryagin_residual: adjoint/trajectory grid mismatch");

    const bool supplied = spec.cost.kind == CostKind::SuppliedEnergy;
    const MatrixXd QJR = sys.Q() * (sys.J() + sys.R());
    PontryaginResidual r;
    double s2 = 0.0, a2 = 0.0, g2 = 0.0;
    for (int k = 1; k < N; ++k) {
        const VectorXd u = 0.5 * (traj.controls.col(k - 1) + traj.controls.col(k));
        const VectorXd x = traj.states.col(k);
        const VectorXd rs = (traj.states.col(k + 1) - traj.states.col(k - 1)) / (2.0 * h) - (sys.A() * x + sys.B() * u);
        const VectorXd lam = 0.5 * (interval_adjoints.col(k - 1) + interval_adjoints.col(k));
        VectorXd rhs = -2.0 * spec.W * x + QJR * lam;
        if (supplied) rhs -= sys.Q() * (sys.B() * u);
        const VectorXd ra = (interval_adjoints.col(k) - interval_adjoints.col(k - 1)) / h - rhs;
        r.state_max = std::max(r.state_max, rs.cwiseAbs().maxCoeff());
        r.adjoint_max = std::max(r.adjoint_max, ra.cwiseAbs().maxCoeff());
        s2 += h * rs.squaredNorm();
        a2 += h * ra.squaredNorm();
    }

    const MatrixXd s = switching_function(sys, traj, interval_adjoints);
    const double smax = s.size() ? s.cwiseAbs().maxCoeff() : 0.0;
    for (int k = 0; k < N; ++k) {
        VectorXd g(m);
        for (int i = 0; i < m; ++i) {
            const double lo = spec.box.lower[i];
            const double hi = spec.box.upper[i];
            const double u = traj.controls(i, k);
            double target;
            if (supplied) {
                const double kappa = smax > 0 ? (hi - lo) / smax : 0.0;
                target = std::clamp(u - kappa * s(i, k), lo, hi);
            } else {
                const double bl = sys.B().col(i).dot(interval_adjoints.col(k));
                target = std::clamp(-bl / (2.0 * spec.cost.mu), lo, hi);
            }
            g[i] = u - target;
        }
        if (m) r.argmin_max = std::max(r.argmin_max, g.cwiseAbs().maxCoeff());
        g2 += h * g.squaredNorm();
    }
    r.state_l2 = std::sqrt(s2);
    r.adjoint_l2 = std::sqrt(a2);
    r.argmin_l2 = std::sqrt(g2);
    return r;
}

RiccatiReference riccati_reference(const PHSystem& sys, const MatrixXd& W, double mu, const VectorXd& x0,
                                   const TimeGrid& grid, int substeps) {
    if (!(mu > 0)) throw ConfigError("riccati_reference: mu must be positive");
    if (substeps < 2) substeps = 2;
    if (substeps % 2) ++substeps;
    const int n = sys.n();
    const MatrixXd& A = sys.A();
    const MatrixXd BBt = sys.B() * sys.B().transpose() / mu;
    const int Nf = grid.N * substeps;
    const double hf = grid.h() / substeps;

    auto rhs = [&](const MatrixXd& P) -> MatrixXd {
        MatrixXd F = A.transpose() * P + P * A - P * BBt * P + W;
        return 0.5 * (F + F.transpose());
    };

    std::vector<MatrixXd> Pf(Nf + 1);
    Pf[Nf] = MatrixXd::Zero(n, n);
    for (int j = Nf - 1; j >= 0; --j) {
        const MatrixXd& Pn = Pf[j + 1];
        MatrixXd X = Pn + hf * rhs(Pn);
        bool converged = false;
        for (int it = 0; it < 200; ++it) {
            const MatrixXd Xn = Pn + hf * rhs(0.5 * (X + Pn));
            const double delta = (Xn - X).cwiseAbs().maxCoeff();
            X = Xn;
            if (!X.allFinite()) break;
            if (delta <= 1e-14 * std::max(1.0, X.cwiseAbs().maxCoeff())) {
                converged = true;
                break;
            }
        }
        if (!converged)
            throw SolverError("riccati_reference: implicit midpoint step did not converge at t = " +
                              std::to_string(j * hf) + " (increase substeps)");
        Pf[j] = X;
    }

    RiccatiReference ref;
    ref.substeps = substeps;
    ref.P.resize(grid.N + 1);
    for (int k = 0; k <= grid.N; ++k) ref.P[k] = Pf[k * substeps];

    Trajectory& tr = ref.trajectory;
    tr.grid = grid;
    tr.states.resize(n, grid.N + 1);
    tr.controls.resize(sys.m(), grid.N);
    const MatrixXd I = MatrixXd::Identity(n, n);
    VectorXd x = x0;
    tr.states.col(0) = x0;
    for (int j = 0; j < Nf; ++j) {
        if (j % substeps == substeps / 2) tr.controls.col(j / substeps) = -sys.B().transpose() * Pf[j] * x / mu;
        const MatrixXd Acl = A - BBt * 0.5 * (Pf[j] + Pf[j + 1]);
        x = (I - 0.5 * hf * Acl).partialPivLu().solve((I + 0.5 * hf * Acl) * x);
        if ((j + 1) % substeps == 0) tr.states.col((j + 1) / substeps) = x;
    }
    return ref;
}

MatrixXd algebraic_riccati(const MatrixXd& A, const MatrixXd& B, const MatrixXd& W, double mu) {
    const int n = static_cast<int>(A.rows());
    MatrixXd H(2 * n, 2 * n);
    H << A, -B * B.transpose() / mu, -W, -A.transpose();
    Eigen::EigenSolver<MatrixXd> es(H);
    Eigen::MatrixXcd V(2 * n, n);
    int c = 0;
    for (int i = 0; i < 2 * n; ++i)
        if (es.eigenvalues()[i].real() < 0 && c < n) V.col(c++) = es.eigenvectors().col(i);
    if (c != n) throw SolverError("algebraic_riccati: Hamiltonian matrix has eigenvalues on the imaginary axis");
    const Eigen::MatrixXcd X1 = V.topRows(n);
    const Eigen::MatrixXcd X2 = V.bottomRows(n);
    const MatrixXd P = (X2 * X1.inverse()).real();
    return 0.5 * (P + P.transpose());
}

KernelProjector kernel_projector(const PHSystem& sys, const MatrixXd& W, double tau_rank) {
    const int n = sys.n();
    MatrixXd S(2 * n, n);
    S << sys.R_sqrt() * sys.Q(), psd_sqrt(W);
    KernelProjector kp;
    const double smax0 = S.cwiseAbs().maxCoeff();
    if (smax0 == 0.0) {
        kp.projector = MatrixXd::Identity(n, n);
        kp.dimension = n;
        return kp;
    }
    Eigen::BDCSVD<MatrixXd> svd(S, Eigen::ComputeFullV);
    const VectorXd sv = svd.singularValues();
    int rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > tau_rank * sv[0]) ++rank;
    const MatrixXd V0 = svd.matrixV().rightCols(n - rank);
    kp.projector = V0 * V0.transpose();
    kp.dimension = n - rank;
    return kp;
}

namespace {

double spread(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    return *hi > 0 ? (*hi - *lo) / *hi : 0.0;
}

// Decay rate of one boundary layer: least-squares slope of log f against the
// distance from the boundary, ignoring samples below the round-off floor.
double layer_rate(const std::vector<double>& dist, const std::vector<double>& f) {
    const double fmax = *std::max_element(f.begin(), f.end());
    std::vector<double> x, y;
    for (std::size_t i = 0; i < f.size(); ++i)
        if (f[i] > 1e-12 * fmax) {
            x.push_back(dist[i]);
            y.push_back(std::log(f[i]));
        }
    if (x.size() < 2) return 0.0;
    const double q = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / q;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / q;
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    return sxx > 0 ? -sxy / sxx : 0.0;
}

}  // namespace

TurnpikeReport turnpike_metrics(const std::vector<Trajectory>& solutions, const KernelProjector& projector,
                                double plateau_tolerance) {
    if (solutions.size() < 3) throw ConfigError("turnpike_metrics: need at least three horizons");
    TurnpikeReport rep;
    rep.kernel_dimension = projector.dimension;
    rep.plateau_tolerance = plateau_tolerance;
    rep.note = "envelope uses |x0| unsquared on the right-hand side, as in the exponential turnpike estimate";

    std::vector<const Trajectory*> order;
    for (const auto& s : solutions) order.push_back(&s);
    std::stable_sort(order.begin(), order.end(),
                     [](const Trajectory* a, const Trajectory* b) { return a->grid.T < b->grid.T; });

    for (const Trajectory* tr : order) {
        const int N = tr->grid.N;
        const double h = tr->grid.h();
        const double T = tr->grid.T;
        const int n = static_cast<int>(tr->states.rows());
        if (projector.projector.rows() != n) throw InvariantError("turnpike_metrics: projector dimension mismatch");
        const MatrixXd comp = MatrixXd::Identity(n, n) - projector.projector;
        const MatrixXd ubar = filtered_controls(tr->controls);
        TurnpikeSample smp;
        smp.T = T;
        std::vector<double> left_t, left_f, right_t, right_f;
        VectorXd f(N);
        for (int k = 0; k < N; ++k) {
            const VectorXd xm = tr->midpoint(k);
            const double xx = xm.squaredNorm();
            const double uu = ubar.col(k).squaredNorm();
            smp.distance_integral += h * (comp * xm).squaredNorm();
            smp.state_integral += h * xx;
            smp.control_integral += h * uu;
            f[k] = xx + uu;
            const double t = (k + 0.5) * h;
            if (f[k] > 0 && t <= T / 3.0) {
                left_t.push_back(t);
                left_f.push_back(f[k]);
            } else if (f[k] > 0 && t >= 2.0 * T / 3.0) {
                right_t.push_back(T - t);
                right_f.push_back(f[k]);
            }
        }
        smp.combined_integral = smp.state_integral + smp.control_integral;
        const double x0n = tr->states.col(0).norm();
        if (!left_f.empty() && x0n > 0) {
            smp.fit_omega = layer_rate(left_t, left_f);
            if (!right_f.empty()) smp.fit_omega = std::max(smp.fit_omega, layer_rate(right_t, right_f));
            double c = 0.0;
            for (int k = 0; k < N; ++k) {
                const double t = (k + 0.5) * h;
                const double env = (std::exp(-smp.fit_omega * t) + std::exp(-smp.fit_omega * (T - t))) * x0n;
                c = std::max(c, f[k] / env);
            }
            smp.fit_c = c;
        }
        rep.samples.push_back(smp);
    }

    const std::size_t half = rep.samples.size() / 2;
    std::vector<double> comb, dist;
    for (std::size_t i = half; i < rep.samples.size(); ++i) {
        comb.push_back(rep.samples[i].combined_integral);
        dist.push_back(rep.samples[i].distance_integral);
    }
    rep.combined_variation = spread(comb);
    rep.distance_variation = spread(dist);
    rep.plateau = rep.combined_variation < plateau_tolerance;
    return rep;
}

std::string ComparisonRow::label() const {
    switch (kind) {
        case RowKind::Uncontrolled: return "uncontrolled";
        case RowKind::SuppliedEnergy: return "supplied energy";
        case RowKind::Quadratic: {
            char buf[64];
            std::snprintf(buf, sizeof buf, "quadratic mu=%g", mu);
            return buf;
        }
    }
    return "";
}

std::vector<ComparisonRow> compare_costs(std::vector<ComparisonRow> rows) {
    if (rows.empty()) return rows;
    const ComparisonRow& base = rows.front();
    for (const auto& r : rows) {
        if (std::abs(r.ledger.initial - base.ledger.initial) > 1e-9 * std::max(1.0, std::abs(base.ledger.initial)))
            throw InvariantError("compare_costs: rows start from different initial energies");
        if (r.grid.N != base.grid.N || std::abs(r.grid.T - base.grid.T) > 1e-12 * base.grid.T)
            throw InvariantError("compare_costs: rows use different time grids");
    }
    auto rank = [](const ComparisonRow& r) { return static_cast<int>(r.kind); };
    std::stable_sort(rows.begin(), rows.end(), [&](const ComparisonRow& a, const ComparisonRow& b) {
        if (rank(a) != rank(b)) return rank(a) < rank(b);
        return a.mu > b.mu;
    });
    return rows;
}

std::string comparison_csv(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    os << "cost,withdrawn_J,dissipated_J,remaining_J,initial_J,balance_residual_J\n";
    char buf[256];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.3g\n", r.label().c_str(), r.ledger.withdrawn,
                      r.ledger.dissipated, r.ledger.remaining, r.ledger.initial, r.ledger.balance_residual);
        os << buf;
    }
    return os.str();
}

std::string comparison_text(const std::vector<ComparisonRow>& rows) {
    std::ostringstream os;
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-22s %14s %14s %14s %14s\n", "Cost", "Withdrawn [J]", "Dissipated [J]",
                  "Remaining [J]", "Initial [J]");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-22s %14.6g %14.6g %14.6g %14.6g\n", r.label().c_str(), r.ledger.withdrawn,
                      r.ledger.dissipated, r.ledger.remaining, r.ledger.initial);
        os << buf;
    }
    return os.str();
}

}  // namespace phdamp
