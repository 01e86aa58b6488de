"""Reference values frozen in the unit tests.

Independent of the C++ code: dense linear algebra in numpy/scipy.
Run: python3 tests/oracles/oracles.py
"""
import itertools

import numpy as np
from scipy.linalg import solve_continuous_are


def lift(M, D, K, F):
    n = M.shape[0]
    J = np.block([[np.zeros((n, n)), -np.eye(n)], [np.eye(n), np.zeros((n, n))]])
    R = np.block([[D, np.zeros((n, n))], [np.zeros((n, n)), np.zeros((n, n))]])
    Q = np.block([[np.linalg.inv(M), np.zeros((n, n))], [np.zeros((n, n)), K]])
    B = np.vstack([F, np.zeros_like(F)])
    return J, R, Q, B


def two_dof():
    M = np.array([[2.0, 0.3], [0.3, 1.0]])
    K = np.array([[50.0, -10.0], [-10.0, 30.0]])
    D = 0.05 * M + 0.005 * K
    F = np.array([[-1.0], [1.0]])
    return lift(M, D, K, F)


def condensed(A, B, W, mu, x0, T, N):
    """Midpoint dynamics; cost sum h (xmid' W xmid + mu u^2) as 1/2 u'Hu + g'u + c."""
    n, m = B.shape
    h = T / N
    I = np.eye(n)
    Phi = np.linalg.solve(I - h / 2 * A, I + h / 2 * A)
    Gam = np.linalg.solve(I - h / 2 * A, h * B)
    # x_k = S_k x0 + U_k u
    S = [I]
    U = [np.zeros((n, m * N))]
    for k in range(N):
        Uk = Phi @ U[-1]
        Uk[:, k * m:(k + 1) * m] += Gam
        S.append(Phi @ S[-1])
        U.append(Uk)
    H = 2 * h * mu * np.eye(m * N)
    g = np.zeros(m * N)
    c = 0.0
    for k in range(N):
        Sm = 0.5 * (S[k] + S[k + 1]) @ x0
        Um = 0.5 * (U[k] + U[k + 1])
        H += 2 * h * Um.T @ W @ Um
        g += 2 * h * Um.T @ W @ Sm
        c += h * Sm @ W @ Sm
    return H, g, c


def enumerate_box_qp(H, g, c, lo, hi):
    """Every assignment of (lower, free, upper); keeps the KKT point."""
    nv = len(g)
    best = None
    for pattern in itertools.product((-1, 0, 1), repeat=nv):
        pattern = np.array(pattern)
        u = np.where(pattern < 0, lo, np.where(pattern > 0, hi, 0.0))
        free = pattern == 0
        if free.any():
            rhs = -(g[free] + H[np.ix_(free, ~free)] @ u[~free])
            u[free] = np.linalg.solve(H[np.ix_(free, free)], rhs)
            if np.any(u[free] < lo - 1e-12) or np.any(u[free] > hi + 1e-12):
                continue
        grad = H @ u + g
        if np.any(grad[pattern < 0] < -1e-10) or np.any(grad[pattern > 0] > 1e-10):
            continue
        val = 0.5 * u @ H @ u + g @ u + c
        if best is None or val < best[0]:
            best = (val, u)
    return best


def main():
    np.set_printoptions(precision=17)
    J, R, Q, B = two_dof()
    A = (J - R) @ Q
    x0 = np.array([0.0, 0.0, 1.0, -0.5])
    H, g, c = condensed(A, B, Q, 0.1, x0, 1.0, 10)
    free_u = np.linalg.solve(H, -g)
    print("box QP, free minimizer max |u| =", np.abs(free_u).max())
    val, u = enumerate_box_qp(H, g, c, -2.0, 2.0)
    print("box QP objective = %.17g" % val)
    print("box QP controls =", repr(u))

    # 1-DOF: M=2, D=0.1, K=50, F=1; W = Q, mu = 0.1
    J1, R1, Q1, B1 = lift(np.array([[2.0]]), np.array([[0.1]]), np.array([[50.0]]), np.array([[1.0]]))
    A1 = (J1 - R1) @ Q1
    P = solve_continuous_are(A1, B1, Q1, 0.1 * np.eye(1))
    print("ARE P =", repr(P))


if __name__ == "__main__":
    main()
