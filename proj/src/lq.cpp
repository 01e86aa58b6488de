#include "phdamp/lq.hpp"

#include "phdamp/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace phdamp {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

enum : signed char { Free = 0, Lower = -1, Upper = 1, Fixed = 2 };

struct Stage {
    MatrixXd K;  ///< m x n feedback, zero rows for bound entries
    VectorXd d;
};

class RiccatiCache {
public:
    explicit RiccatiCache(const LQProblem& lq)
        : lq_(lq), P_(lq.N + 1), p_(lq.N + 1), stages_(lq.N), valid_from_(lq.N) {
        P_[lq.N] = lq.QN;
        p_[lq.N] = VectorXd::Zero(lq.n());
    }

    /// Stages k >= first_invalid keep their factorization.
    void invalidate_up_to(int stage) { valid_from_ = std::max(valid_from_, stage + 1); }

    long sweep(const std::vector<signed char>& state) {
        long count = 0;
        for (int k = valid_from_ - 1; k >= 0; --k) {
            stage(k, state);
            ++count;
        }
        valid_from_ = 0;
        return count;
    }

    const MatrixXd& P(int k) const { return P_[k]; }
    const VectorXd& p(int k) const { return p_[k]; }
    const Stage& at(int k) const { return stages_[k]; }

private:
    double bound_value(signed char s, int i) const { return s == Upper ? lq_.u_max[i] : lq_.u_min[i]; }

    void stage(int k, const std::vector<signed char>& state) {
        const int n = lq_.n();
        const int m = lq_.m();
        const MatrixXd& Pn = P_[k + 1];
        const VectorXd& pn = p_[k + 1];
        const MatrixXd PA = Pn * lq_.A;
        const MatrixXd PB = Pn * lq_.B;
        MatrixXd Qxx = lq_.Q;
        Qxx.noalias() += lq_.A.transpose() * PA;
        MatrixXd Qux = lq_.S.transpose();
        Qux.noalias() += lq_.B.transpose() * PA;
        MatrixXd Quu = lq_.R;
        Quu.noalias() += lq_.B.transpose() * PB;
        Quu = 0.5 * (Quu + Quu.transpose()).eval();
        const VectorXd qx = lq_.A.transpose() * pn;
        const VectorXd qu = lq_.B.transpose() * pn;

        std::vector<int> F;
        VectorXd b = VectorXd::Zero(m);
        for (int i = 0; i < m; ++i) {
            const signed char s = state[static_cast<std::size_t>(k) * m + i];
            if (s == Free) F.push_back(i);
            else b[i] = bound_value(s, i);
        }
        Stage& st = stages_[k];
        st.K = MatrixXd::Zero(m, n);
        st.d = b;
        if (!F.empty()) {
            const int nf = static_cast<int>(F.size());
            MatrixXd QuuFF(nf, nf), QuxF(nf, n);
            VectorXd rhs(nf);
            const VectorXd Quub = Quu * b;
            for (int a = 0; a < nf; ++a) {
                QuxF.row(a) = Qux.row(F[a]);
                rhs[a] = qu[F[a]] + Quub[F[a]];
                for (int c = 0; c < nf; ++c) QuuFF(a, c) = Quu(F[a], F[c]);
            }
            Eigen::LLT<MatrixXd> llt(QuuFF);
            if (llt.info() != Eigen::Success)
                throw SolverError("box LQ: reduced control Hessian is not positive definite at stage " +
                                  std::to_string(k));
            const MatrixXd KF = -llt.solve(QuxF);
            const VectorXd dF = -llt.solve(rhs);
            for (int a = 0; a < nf; ++a) {
                st.K.row(F[a]) = KF.row(a);
                st.d[F[a]] = dF[a];
            }
        }
        MatrixXd QuuK = Quu * st.K;
        MatrixXd Pk = Qxx;
        Pk.noalias() += Qux.transpose() * st.K;
        Pk.noalias() += st.K.transpose() * Qux;
        Pk.noalias() += st.K.transpose() * QuuK;
        P_[k] = 0.5 * (Pk + Pk.transpose());
        p_[k] = qx + st.K.transpose() * qu + Qux.transpose() * st.d + st.K.transpose() * (Quu * st.d);
    }

    const LQProblem& lq_;
    std::vector<MatrixXd> P_;
    std::vector<VectorXd> p_;
    std::vector<Stage> stages_;
    int valid_from_;
};

}  // namespace

LQSolution solve_box_lq(const LQProblem& lq, const LQSettings& cfg) {
    const int n = lq.n();
    const int m = lq.m();
    const int N = lq.N;
    if (N < 1 || lq.B.rows() != n || lq.Q.rows() != n || lq.S.rows() != n || lq.S.cols() != m ||
        lq.R.rows() != m || lq.QN.rows() != n || lq.x0.size() != n || lq.u_min.size() != m || lq.u_max.size() != m)
        throw InvariantError("box LQ: inconsistent dimensions");

    std::vector<signed char> state(static_cast<std::size_t>(N) * m, Free);
    for (int k = 0; k < N; ++k)
        for (int i = 0; i < m; ++i)
            if (lq.u_min[i] == lq.u_max[i]) state[static_cast<std::size_t>(k) * m + i] = Fixed;

    RiccatiCache cache(lq);
    cache.invalidate_up_to(N - 1);
    LQSolution sol;
    sol.x.resize(n, N + 1);
    sol.u.resize(m, N);
    sol.costate.resize(n, N);
    sol.bound_dual = MatrixXd::Zero(m, N);

    MatrixXd grad(m, N);
    double dual_tol = 0.0;
    auto rollout = [&]() {
        sol.riccati_stages += cache.sweep(state);
        sol.x.col(0) = lq.x0;
        for (int k = 0; k < N; ++k) {
            const Stage& st = cache.at(k);
            sol.u.col(k) = st.K * sol.x.col(k) + st.d;
            sol.x.col(k + 1) = lq.A * sol.x.col(k) + lq.B * sol.u.col(k);
        }
        double gscale = 0.0;
        for (int k = 0; k < N; ++k) {
            sol.costate.col(k) = cache.P(k + 1) * sol.x.col(k + 1) + cache.p(k + 1);
            const VectorXd a = lq.S.transpose() * sol.x.col(k);
            const VectorXd b = lq.R * sol.u.col(k);
            const VectorXd c = lq.B.transpose() * sol.costate.col(k);
            grad.col(k) = a + b + c;
            gscale = std::max({gscale, a.cwiseAbs().maxCoeff(), b.cwiseAbs().maxCoeff(), c.cwiseAbs().maxCoeff()});
        }
        dual_tol = cfg.tolerance * std::max(gscale, 1e-300);
    };
    auto at = [&](int k, int i) -> signed char& { return state[static_cast<std::size_t>(k) * m + i]; };
    auto finish = [&]() {
        sol.converged = true;
        sol.status = "solved";
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) sol.bound_dual(i, k) = at(k, i) == Free ? 0.0 : -grad(i, k);
    };

    std::vector<std::vector<signed char>> history;
    bool cautious = false;

    for (int it = 1; it <= cfg.max_iterations; ++it) {
        rollout();
        sol.iterations = it;

        // Proposed changes with their violation measure.
        struct Change {
            int k, i;
            signed char to;
            double measure;
        };
        std::vector<Change> changes;
        for (int k = 0; k < N; ++k) {
            for (int i = 0; i < m; ++i) {
                const signed char s = at(k, i);
                const double u = sol.u(i, k);
                const double w = -grad(i, k);
                if (s == Free) {
                    const double tol_u = cfg.tolerance * std::max(1.0, std::abs(lq.u_max[i]));
                    const double tol_l = cfg.tolerance * std::max(1.0, std::abs(lq.u_min[i]));
                    if (u > lq.u_max[i] + tol_u) changes.push_back({k, i, Upper, (u - lq.u_max[i]) / tol_u});
                    else if (u < lq.u_min[i] - tol_l) changes.push_back({k, i, Lower, (lq.u_min[i] - u) / tol_l});
                } else if (s == Upper && w < -dual_tol) {
                    changes.push_back({k, i, Free, -w / dual_tol});
                } else if (s == Lower && w > dual_tol) {
                    changes.push_back({k, i, Free, w / dual_tol});
                }
            }
        }
        if (cfg.on_iteration) cfg.on_iteration(it, static_cast<int>(changes.size()));
        if (changes.empty()) {
            finish();
            break;
        }
        history.push_back(state);
        if (cautious) {
            // One change per iteration once the full update has cycled.
            const auto best = std::max_element(changes.begin(), changes.end(),
                                               [](const Change& a, const Change& b) { return a.measure < b.measure; });
            changes = {*best};
        }
        int last_stage = 0;
        for (const Change& c : changes) {
            at(c.k, c.i) = c.to;
            last_stage = std::max(last_stage, c.k);
        }
        cache.invalidate_up_to(last_stage);
        if (std::find(history.begin(), history.end(), state) != history.end()) {
            if (cautious) break;
            cautious = true;
        }
    }

    if (!sol.converged && cfg.fallback_iterations > 0) {
        // Primal feasible active-set phase from the clipped iterate: step towards
        // the subspace minimizer, stop at the first blocking bound, release
        // wrong-signed multipliers only after full steps.
        MatrixXd u = sol.u;
        int last_stage = N - 1;
        for (int k = 0; k < N; ++k)
            for (int i = 0; i < m; ++i) {
                if (at(k, i) == Fixed) continue;
                u(i, k) = std::clamp(u(i, k), lq.u_min[i], lq.u_max[i]);
                at(k, i) = u(i, k) == lq.u_max[i] ? Upper : u(i, k) == lq.u_min[i] ? Lower : Free;
            }
        cache.invalidate_up_to(last_stage);
        for (int it = 1; it <= cfg.fallback_iterations; ++it) {
            rollout();
            ++sol.iterations;
            double alpha = 1.0;
            for (int k = 0; k < N; ++k)
                for (int i = 0; i < m; ++i) {
                    if (at(k, i) != Free) continue;
                    const double d = sol.u(i, k) - u(i, k);
                    if (d > 0.0 && sol.u(i, k) > lq.u_max[i]) alpha = std::min(alpha, (lq.u_max[i] - u(i, k)) / d);
                    if (d < 0.0 && sol.u(i, k) < lq.u_min[i]) alpha = std::min(alpha, (lq.u_min[i] - u(i, k)) / d);
                }
            alpha = std::max(alpha, 0.0);
            last_stage = -1;
            int changed = 0;
            if (alpha < 1.0) {
                u += alpha * (sol.u - u);
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < m; ++i) {
                        if (at(k, i) != Free) continue;
                        const double tol = 1e-12 * std::max(1.0, lq.u_max[i] - lq.u_min[i]);
                        if (u(i, k) >= lq.u_max[i] - tol) at(k, i) = Upper;
                        else if (u(i, k) <= lq.u_min[i] + tol) at(k, i) = Lower;
                        else continue;
                        u(i, k) = at(k, i) == Upper ? lq.u_max[i] : lq.u_min[i];
                        last_stage = k;
                        ++changed;
                    }
            } else {
                u = sol.u;
                double worst = 0.0;
                int wk = -1, wi = -1;
                for (int k = 0; k < N; ++k)
                    for (int i = 0; i < m; ++i) {
                        const double w = -grad(i, k);
                        const double v = at(k, i) == Upper ? -w : at(k, i) == Lower ? w : 0.0;
                        if (v > dual_tol && v > worst) {
                            worst = v;
                            wk = k;
                            wi = i;
                        }
                    }
                if (wk >= 0) {
                    at(wk, wi) = Free;
                    last_stage = wk;
                    changed = 1;
                }
            }
            if (cfg.on_iteration) cfg.on_iteration(-it, changed);
            if (changed == 0 && alpha >= 1.0) {
                finish();
                break;
            }
            if (last_stage >= 0) cache.invalidate_up_to(last_stage);
        }
    }
    if (!sol.converged) sol.status = "active-set iteration limit reached";

    sol.objective = 0.0;
    for (int k = 0; k < N; ++k) {
        const VectorXd& x = sol.x.col(k);
        const VectorXd& u = sol.u.col(k);
        sol.objective += 0.5 * x.dot(lq.Q * x) + x.dot(lq.S * u) + 0.5 * u.dot(lq.R * u);
    }
    sol.objective += 0.5 * sol.x.col(N).dot(lq.QN * sol.x.col(N));
    return sol;
}

}  // namespace phdamp
