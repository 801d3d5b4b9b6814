"""Independent reference solvers shared by the test modules."""

import numpy as np
from numba import njit

from lopblock._chain import chain_objective, chain_tv_solve


@njit(cache=True)
def _obj_subgrad(x, H, b, lam, beta):
    a = x * x
    s = chain_tv_solve(a, 0.0, beta)
    f = 0.5 * x @ (H @ x) - b @ x + lam * chain_objective(a, 0.0, beta, s)
    g = H @ x - b
    for i in range(x.size):
        if s[i] > 0:
            g[i] += lam * x[i] / s[i]
    return f, g


@njit(cache=True)
def _psg_run(H, b, lam, beta, x0, iters, c, m):
    x = np.maximum(x0, 0.0)
    best = np.inf
    for k in range(1, iters + 1):
        f, g = _obj_subgrad(x, H, b, lam, beta)
        if f < best:
            best = f
        # strongly convex schedule: constant 1/L, then 2/(m (k+1))
        x = np.maximum(x - min(c, 2.0 / (m * (k + 1))) * g, 0.0)
    return best


def subgradient_oracle(A, r, x_bar, P, mu, lam, beta, starts=20, iters=30000, seed=0):
    """Best value of the omega = 0 estimation objective found by projected
    subgradient descent (steps min(1/L, 2/(m (k+1))) for the
    strong convexity modulus m of the smooth part) from ``starts`` random points."""
    rng = np.random.default_rng(seed)
    H = A.T @ A + mu * P
    b = A.T @ r + mu * (P @ x_bar)
    const = 0.5 * r @ r + 0.5 * mu * x_bar @ (P @ x_bar)
    w = np.linalg.eigvalsh(H)
    c, m = 1.0 / w[-1], w[0]
    best = np.inf
    for _ in range(starts):
        x0 = 2.0 * np.abs(rng.standard_normal(x_bar.size))
        best = min(best, _psg_run(H, b, lam, beta, x0, iters, c, m))
    return best + const


def random_instance(rng, n=8, m=6):
    A = rng.standard_normal((m, n))
    x_true = np.abs(rng.standard_normal(n))
    r = A @ x_true + 0.1 * rng.standard_normal(m)
    x_bar = x_true + 0.3 * rng.standard_normal(n)
    return A, r, x_bar, np.eye(n)
