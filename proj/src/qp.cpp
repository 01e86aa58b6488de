#include "phdamp/qp.hpp"

#include "phdamp/error.hpp"

#include <Eigen/OrderingMethods>
#include <Eigen/SparseCholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <vector>

namespace phdamp {

using Eigen::VectorXd;
using Sp = Eigen::SparseMatrix<double>;
using Triplet = Eigen::Triplet<double>;

namespace {

constexpr double kInfBound = 1e20;
constexpr double kMinScaling = 1e-4;
constexpr double kMaxScaling = 1e4;
constexpr double kRhoMin = 1e-6;
constexpr double kRhoMax = 1e6;
constexpr double kRhoEqFactor = 1e3;

bool finite_bound(double b) { return std::isfinite(b) && std::abs(b) < kInfBound; }

double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

VectorXd col_inf_norms(const Sp& A) {
    VectorXd out = VectorXd::Zero(A.cols());
    for (int j = 0; j < A.outerSize(); ++j)
        for (Sp::InnerIterator it(A, j); it; ++it) out[j] = std::max(out[j], std::abs(it.value()));
    return out;
}

VectorXd row_inf_norms(const Sp& A) {
    VectorXd out = VectorXd::Zero(A.rows());
    for (int j = 0; j < A.outerSize(); ++j)
        for (Sp::InnerIterator it(A, j); it; ++it) out[it.row()] = std::max(out[it.row()], std::abs(it.value()));
    return out;
}

double limit_scaling(double v) {
    if (v < kMinScaling) return 1.0;
    return std::min(v, kMaxScaling);
}

/// Scaled working copy of the problem in OSQP form  l <= A x <= u.
struct ScaledProblem {
    int n = 0;      // variables
    int mc = 0;     // constraint rows
    int n_eq = 0;   // leading rows of A are the equalities
    std::vector<int> bound_var;  // row r >= n_eq bounds variable bound_var[r - n_eq]
    Sp P;           // full symmetric
    VectorXd q;
    Sp A;
    VectorXd l, u;
    VectorXd D, E;  // variable / constraint scaling
    double c = 1.0; // cost scaling
    std::vector<char> is_equality;
};

ScaledProblem build_scaled(const QPProblem& qp, int iterations) {
    ScaledProblem s;
    s.n = qp.num_vars();
    s.n_eq = qp.num_eq();
    for (int i = 0; i < s.n; ++i)
        if (finite_bound(qp.lower[i]) || finite_bound(qp.upper[i])) s.bound_var.push_back(i);
    s.mc = s.n_eq + static_cast<int>(s.bound_var.size());

    std::vector<Triplet> trip;
    trip.reserve(qp.E.nonZeros() + s.bound_var.size());
    for (int j = 0; j < qp.E.outerSize(); ++j)
        for (Sp::InnerIterator it(qp.E, j); it; ++it) trip.emplace_back(it.row(), it.col(), it.value());
    s.l.resize(s.mc);
    s.u.resize(s.mc);
    s.l.head(s.n_eq) = qp.e;
    s.u.head(s.n_eq) = qp.e;
    for (std::size_t r = 0; r < s.bound_var.size(); ++r) {
        const int var = s.bound_var[r];
        const int row = s.n_eq + static_cast<int>(r);
        trip.emplace_back(row, var, 1.0);
        s.l[row] = finite_bound(qp.lower[var]) ? qp.lower[var] : -std::numeric_limits<double>::infinity();
        s.u[row] = finite_bound(qp.upper[var]) ? qp.upper[var] : std::numeric_limits<double>::infinity();
    }
    s.A.resize(s.mc, s.n);
    s.A.setFromTriplets(trip.begin(), trip.end());
    s.P = qp.P;
    s.q = qp.g;

    s.D = VectorXd::Ones(s.n);
    s.E = VectorXd::Ones(s.mc);
    for (int it = 0; it < iterations; ++it) {
        const VectorXd pc = col_inf_norms(s.P);
        const VectorXd ac = col_inf_norms(s.A);
        const VectorXd ar = row_inf_norms(s.A);
        VectorXd dD(s.n), dE(s.mc);
        for (int j = 0; j < s.n; ++j) dD[j] = 1.0 / std::sqrt(limit_scaling(std::max(pc[j], ac[j])));
        for (int i = 0; i < s.mc; ++i) dE[i] = 1.0 / std::sqrt(limit_scaling(ar[i]));
        s.P = dD.asDiagonal() * s.P * dD.asDiagonal();
        s.A = dE.asDiagonal() * s.A * dD.asDiagonal();
        s.q = dD.cwiseProduct(s.q);
        s.D = s.D.cwiseProduct(dD);
        s.E = s.E.cwiseProduct(dE);

        const VectorXd pc2 = col_inf_norms(s.P);
        const double mean_p = s.n ? pc2.mean() : 0.0;
        const double cost = limit_scaling(std::max(mean_p, inf_norm(s.q)));
        s.P *= 1.0 / cost;
        s.q *= 1.0 / cost;
        s.c /= cost;
    }
    for (int i = 0; i < s.mc; ++i) {
        if (std::isfinite(s.l[i])) s.l[i] *= s.E[i];
        if (std::isfinite(s.u[i])) s.u[i] *= s.E[i];
    }
    s.is_equality.resize(s.mc);
    for (int i = 0; i < s.mc; ++i) s.is_equality[i] = s.l[i] == s.u[i];
    s.P.makeCompressed();
    s.A.makeCompressed();
    return s;
}

using LDLT = Eigen::SimplicialLDLT<Sp, Eigen::Lower, Eigen::AMDOrdering<int>>;

/// Lower triangle of [P + sigma I, A^T; A, -diag(1/rho)].
Sp kkt_matrix(const Sp& P, const Sp& A, double sigma, const VectorXd& rho_inv) {
    const int n = static_cast<int>(P.rows());
    const int mc = static_cast<int>(A.rows());
    std::vector<Triplet> trip;
    trip.reserve(P.nonZeros() / 2 + n + A.nonZeros() + mc);
    for (int j = 0; j < P.outerSize(); ++j)
        for (Sp::InnerIterator it(P, j); it; ++it)
            if (it.row() > j) trip.emplace_back(it.row(), j, it.value());
    const VectorXd pd = P.diagonal();
    for (int i = 0; i < n; ++i) trip.emplace_back(i, i, pd[i] + sigma);
    for (int j = 0; j < A.outerSize(); ++j)
        for (Sp::InnerIterator it(A, j); it; ++it) trip.emplace_back(n + it.row(), j, it.value());
    for (int i = 0; i < mc; ++i) trip.emplace_back(n + i, n + i, -rho_inv[i]);
    Sp K(n + mc, n + mc);
    K.setFromTriplets(trip.begin(), trip.end());
    return K;
}

struct PolishResult {
    bool ok = false;
    VectorXd x, y;  // scaled
    int factorizations = 0;
};

/// Active-set refinement: solve the equality-constrained QP on a guessed
/// active set, then add violated bounds and drop wrong-sign multipliers until
/// the set is consistent.
PolishResult polish(const ScaledProblem& s, const VectorXd& z, const VectorXd& y, const QPSettings& cfg) {
    PolishResult res;
    // 0 inactive, -1 lower, +1 upper, 2 equality
    std::vector<int> state(s.mc, 0);
    for (int i = 0; i < s.mc; ++i) {
        if (s.is_equality[i]) state[i] = 2;
        else if (z[i] - s.l[i] < -y[i]) state[i] = -1;
        else if (s.u[i] - z[i] < y[i]) state[i] = 1;
    }
    const double qscale = std::max(1.0, inf_norm(s.q));

    for (int round = 0; round < cfg.polish_rounds; ++round) {
        std::vector<int> rows;
        for (int i = 0; i < s.mc; ++i)
            if (state[i] != 0) rows.push_back(i);
        const int na = static_cast<int>(rows.size());
        std::vector<int> pos(s.mc, -1);
        for (int k = 0; k < na; ++k) pos[rows[k]] = k;

        std::vector<Triplet> atrip;
        for (int j = 0; j < s.A.outerSize(); ++j)
            for (Sp::InnerIterator it(s.A, j); it; ++it)
                if (pos[it.row()] >= 0) atrip.emplace_back(pos[it.row()], j, it.value());
        Sp Ared(na, s.n);
        Ared.setFromTriplets(atrip.begin(), atrip.end());
        VectorXd b(na);
        for (int k = 0; k < na; ++k) {
            const int i = rows[k];
            b[k] = state[i] == 1 ? s.u[i] : s.l[i];
        }

        const Sp Kd = kkt_matrix(s.P, Ared, cfg.polish_delta, VectorXd::Constant(na, cfg.polish_delta));
        LDLT ldlt(Kd);
        ++res.factorizations;
        if (ldlt.info() != Eigen::Success) return res;

        VectorXd rhs(s.n + na);
        rhs << -s.q, b;
        VectorXd sol = ldlt.solve(rhs);
        for (int r = 0; r < cfg.polish_refine_iterations; ++r) {
            const VectorXd xs = sol.head(s.n);
            const VectorXd ys = sol.tail(na);
            VectorXd kx(s.n + na);
            kx.head(s.n) = s.P * xs + Ared.transpose() * ys;
            kx.tail(na) = Ared * xs;
            sol += ldlt.solve(rhs - kx);
        }
        VectorXd x = sol.head(s.n);
        VectorXd yfull = VectorXd::Zero(s.mc);
        for (int k = 0; k < na; ++k) yfull[rows[k]] = sol[s.n + k];
        const VectorXd Ax = s.A * x;

        bool changed = false;
        const double ytol = 1e-12 * std::max(qscale, inf_norm(yfull));
        for (int i = 0; i < s.mc; ++i) {
            if (state[i] == 2) continue;
            if (state[i] == -1 && yfull[i] > ytol) { state[i] = 0; changed = true; }
            else if (state[i] == 1 && yfull[i] < -ytol) { state[i] = 0; changed = true; }
            else if (state[i] == 0) {
                const double tol_l = 1e-10 * std::max(1.0, std::abs(s.l[i]));
                const double tol_u = 1e-10 * std::max(1.0, std::abs(s.u[i]));
                if (std::isfinite(s.l[i]) && Ax[i] < s.l[i] - tol_l) { state[i] = -1; changed = true; }
                else if (std::isfinite(s.u[i]) && Ax[i] > s.u[i] + tol_u) { state[i] = 1; changed = true; }
            }
        }
        if (!changed) {
            res.ok = true;
            res.x = std::move(x);
            res.y = std::move(yfull);
            return res;
        }
    }
    return res;
}

void unscale(const ScaledProblem& s, const QPProblem& qp, const VectorXd& x, const VectorXd& y, QPSolution& out) {
    out.z = s.D.cwiseProduct(x);
    // Bound rows carry variable bounds exactly; snap tiny overshoot from the
    // linear solves onto the box.
    const VectorXd yu = s.E.cwiseProduct(y) / s.c;
    out.eq_dual = yu.head(s.n_eq);
    out.bound_dual = VectorXd::Zero(s.n);
    for (std::size_t r = 0; r < s.bound_var.size(); ++r) out.bound_dual[s.bound_var[r]] = yu[s.n_eq + r];
    for (int i = 0; i < s.n; ++i) {
        if (finite_bound(qp.lower[i])) out.z[i] = std::max(out.z[i], qp.lower[i]);
        if (finite_bound(qp.upper[i])) out.z[i] = std::min(out.z[i], qp.upper[i]);
    }
    out.objective = qp.objective(out.z);
}

}  // namespace

double QPProblem::objective(const VectorXd& z) const { return 0.5 * z.dot(P * z) + g.dot(z) + constant; }

void QPProblem::check() const {
    const int n = num_vars();
    if (P.rows() != n || P.cols() != n) throw InvariantError("QPProblem: P must be n x n");
    if (E.cols() != n || E.rows() != e.size()) throw InvariantError("QPProblem: E/e dimension mismatch");
    if (lower.size() != n || upper.size() != n) throw InvariantError("QPProblem: bounds dimension mismatch");
    for (int i = 0; i < n; ++i)
        if (lower[i] > upper[i]) throw InvariantError("QPProblem: crossed bounds at variable " + std::to_string(i));
}

double KKTResiduals::max_relative() const {
    return std::max({stationarity, primal, complementarity});
}

KKTResiduals verify_kkt(const QPProblem& qp, const QPSolution& sol) {
    KKTResiduals r;
    const VectorXd& z = sol.z;
    const VectorXd Pz = qp.P * z;
    const VectorXd Etnu = qp.E.transpose() * sol.eq_dual;
    const VectorXd stat = Pz + qp.g + Etnu + sol.bound_dual;
    r.stationarity_abs = inf_norm(stat);
    r.stationarity = r.stationarity_abs /
                     std::max({1.0, inf_norm(Pz), inf_norm(qp.g), inf_norm(Etnu), inf_norm(sol.bound_dual)});
    const VectorXd Ez = qp.E * z;
    r.primal_abs = inf_norm(Ez - qp.e);
    r.primal = r.primal_abs / std::max({1.0, inf_norm(Ez), inf_norm(qp.e)});

    double viol = 0.0;
    double comp = 0.0;
    const double wscale = std::max(1.0, inf_norm(sol.bound_dual));
    for (int i = 0; i < qp.num_vars(); ++i) {
        const bool has_l = finite_bound(qp.lower[i]);
        const bool has_u = finite_bound(qp.upper[i]);
        if (has_l) viol = std::max(viol, qp.lower[i] - z[i]);
        if (has_u) viol = std::max(viol, z[i] - qp.upper[i]);
        const double w = sol.bound_dual[i];
        double c = 0.0;
        if (w > 0) {
            const double scale = has_u ? std::max(1.0, std::abs(qp.upper[i])) : 1.0;
            c = has_u ? w * (qp.upper[i] - z[i]) / scale : w;
        } else if (w < 0) {
            const double scale = has_l ? std::max(1.0, std::abs(qp.lower[i])) : 1.0;
            c = has_l ? -w * (z[i] - qp.lower[i]) / scale : -w;
        }
        comp = std::max(comp, std::abs(c) / wscale);
    }
    r.bound_violation = std::max(viol, 0.0);
    r.complementarity = comp;
    return r;
}

QPSolution solve_qp(const QPProblem& qp, const QPSettings& cfg) {
    qp.check();
    const ScaledProblem s = build_scaled(qp, cfg.scaling_iterations);
    const int n = s.n;
    const int mc = s.mc;

    QPSolution out;
    auto rho_vector = [&](double rho) {
        VectorXd r(mc);
        for (int i = 0; i < mc; ++i) {
            if (s.is_equality[i]) r[i] = kRhoEqFactor * rho;
            else if (!std::isfinite(s.l[i]) && !std::isfinite(s.u[i])) r[i] = kRhoMin;
            else r[i] = rho;
        }
        return r;
    };

    double rho = std::clamp(cfg.rho, kRhoMin, kRhoMax);
    VectorXd rho_vec = rho_vector(rho);
    VectorXd rho_inv = rho_vec.cwiseInverse();
    LDLT ldlt;
    {
        const Sp K = kkt_matrix(s.P, s.A, cfg.sigma, rho_inv);
        ldlt.analyzePattern(K);
        ldlt.factorize(K);
        ++out.factorizations;
        if (ldlt.info() != Eigen::Success) throw SolverError("solve_qp: KKT factorization failed");
    }

    VectorXd x = VectorXd::Zero(n);
    VectorXd z = VectorXd::Zero(mc);
    VectorXd y = VectorXd::Zero(mc);
    // Start z inside the box.
    for (int i = 0; i < mc; ++i) z[i] = std::clamp(0.0, s.l[i], s.u[i]);

    const VectorXd Dinv = s.D.cwiseInverse();
    const VectorXd Einv = s.E.cwiseInverse();
    const double cinv = 1.0 / s.c;

    std::vector<int> last_active;
    int stable_checks = 0;
    std::vector<int> polished_signature;
    bool done = false;
    VectorXd rhs(n + mc);

    auto try_polish = [&]() -> bool {
        PolishResult pr = polish(s, z, y, cfg);
        out.factorizations += pr.factorizations;
        if (!pr.ok) return false;
        QPSolution cand;
        unscale(s, qp, pr.x, pr.y, cand);
        cand.residuals = verify_kkt(qp, cand);
        const double tol = std::max(1e-9, cfg.eps_rel);
        const double bound_tol = 1e-9 * std::max(1.0, std::max(inf_norm(qp.lower.unaryExpr([](double v) {
                                                                     return finite_bound(v) ? v : 0.0;
                                                                 })),
                                                                 inf_norm(qp.upper.unaryExpr([](double v) {
                                                                     return finite_bound(v) ? v : 0.0;
                                                                 }))));
        if (cand.residuals.max_relative() <= tol && cand.residuals.bound_violation <= bound_tol) {
            cand.iterations = out.iterations;
            cand.factorizations = out.factorizations;
            cand.polished = true;
            cand.converged = true;
            cand.status = "solved (polished)";
            out = std::move(cand);
            return true;
        }
        return false;
    };

    for (int iter = 1; iter <= cfg.max_iter && !done; ++iter) {
        rhs.head(n) = cfg.sigma * x - s.q;
        rhs.tail(mc) = z - rho_inv.cwiseProduct(y);
        const VectorXd sol = ldlt.solve(rhs);
        const VectorXd x_tilde = sol.head(n);
        const VectorXd nu = sol.tail(mc);
        const VectorXd z_tilde = z + rho_inv.cwiseProduct(nu - y);

        x = cfg.alpha * x_tilde + (1.0 - cfg.alpha) * x;
        const VectorXd z_relaxed = cfg.alpha * z_tilde + (1.0 - cfg.alpha) * z;
        VectorXd z_new = z_relaxed + rho_inv.cwiseProduct(y);
        for (int i = 0; i < mc; ++i) z_new[i] = std::clamp(z_new[i], s.l[i], s.u[i]);
        y += rho_vec.cwiseProduct(z_relaxed - z_new);
        z = std::move(z_new);
        out.iterations = iter;

        if (iter % cfg.check_interval != 0 && iter != cfg.max_iter) continue;

        const VectorXd Ax = s.A * x;
        const VectorXd Px = s.P * x;
        const VectorXd Aty = s.A.transpose() * y;
        const double prim = inf_norm(Einv.cwiseProduct(Ax - z));
        const double dual = cinv * inf_norm(Dinv.cwiseProduct(Px + s.q + Aty));
        const double eps_prim =
            cfg.eps_abs + cfg.eps_rel * std::max(inf_norm(Einv.cwiseProduct(Ax)), inf_norm(Einv.cwiseProduct(z)));
        const double eps_dual =
            cfg.eps_abs + cfg.eps_rel * cinv *
                              std::max({inf_norm(Dinv.cwiseProduct(Px)), inf_norm(Dinv.cwiseProduct(Aty)),
                                        inf_norm(Dinv.cwiseProduct(s.q))});
        if (cfg.on_progress) cfg.on_progress({iter, prim, dual, rho});

        if (prim <= eps_prim && dual <= eps_dual) {
            unscale(s, qp, x, y, out);
            out.converged = true;
            out.status = "solved";
            done = true;
            if (cfg.polish) {
                const QPSolution admm = out;
                if (!try_polish()) out = admm;
            }
            break;
        }

        // Polish early once the active-set guess has settled.
        if (cfg.polish) {
            std::vector<int> active(mc, 0);
            for (int i = 0; i < mc; ++i) {
                if (s.is_equality[i]) continue;
                if (z[i] - s.l[i] < -y[i]) active[i] = -1;
                else if (s.u[i] - z[i] < y[i]) active[i] = 1;
            }
            stable_checks = active == last_active ? stable_checks + 1 : 0;
            last_active = std::move(active);
            if (stable_checks >= 3 && last_active != polished_signature) {
                polished_signature = last_active;
                if (try_polish()) {
                    done = true;
                    break;
                }
            }
        }

        if (cfg.adaptive_rho) {
            const double prim_s = inf_norm(Ax - z) / std::max({inf_norm(Ax), inf_norm(z), 1e-30});
            const double dual_s =
                inf_norm(Px + s.q + Aty) / std::max({inf_norm(Px), inf_norm(Aty), inf_norm(s.q), 1e-30});
            double rho_new = rho * std::sqrt(prim_s / std::max(dual_s, 1e-30));
            rho_new = std::clamp(rho_new, kRhoMin, kRhoMax);
            if (rho_new > cfg.adaptive_rho_tolerance * rho || rho_new < rho / cfg.adaptive_rho_tolerance) {
                rho = rho_new;
                rho_vec = rho_vector(rho);
                rho_inv = rho_vec.cwiseInverse();
                ldlt.factorize(kkt_matrix(s.P, s.A, cfg.sigma, rho_inv));
                ++out.factorizations;
                if (ldlt.info() != Eigen::Success) throw SolverError("solve_qp: KKT refactorization failed");
            }
        }
    }

    if (!done) {
        unscale(s, qp, x, y, out);
        out.converged = false;
        out.status = "maximum iterations reached";
        if (cfg.polish) {
            const QPSolution admm = out;
            if (!try_polish()) out = admm;
        }
    }
    out.residuals = verify_kkt(qp, out);
    return out;
}

}  // namespace phdamp
