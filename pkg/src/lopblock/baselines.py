"""Reference estimators: nonnegative least squares and the hybrid
model-and-data estimator (quadratic data prior, no sparsity penalty)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import optimize

__all__ = ["SolverReport", "nnls", "hybrid_model_data", "pg_residual", "spectral_norm"]


@dataclass
class SolverReport:
    x_hat: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt_residual: float = 0.0


def spectral_norm(S, iters=50, tol=1e-8, seed=0):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    S = np.asarray(S, dtype=float)
    n = S.shape[0]
    if n == 0 or not np.any(S):
        return 0.0
    v = np.random.default_rng(seed).standard_normal(n)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(iters):
        w = S @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = float(v @ w)
        v = w / nw
        if abs(new - lam) <= tol * abs(new):
            lam = new
            break
        lam = new
    # power iteration underestimates; the Rayleigh quotient of the last
    # iterate is bounded by the true norm, so pad by the residual
    res = np.linalg.norm(S @ v - lam * v)
    return float(lam + res)


def pg_residual(x, grad):
    """Norm of the projected-gradient fixed-point map ``x - max(x - grad, 0)``."""
    return float(np.linalg.norm(x - np.maximum(x - grad, 0.0)))


def _ls_obj(A, r, x):
    res = A @ x - r
    return 0.5 * float(res @ res)


def _projected_gradient(H, b, x0, step, tol, max_iter, obj):
    x = np.maximum(np.asarray(x0, dtype=float), 0.0)
    y = x.copy()
    t = 1.0
    f_prev = obj(x)
    res = np.inf
    for it in range(1, max_iter + 1):
        # FISTA with a monotone restart
        g = H @ y - b
        x_new = np.maximum(y - step * g, 0.0)
        f_new = obj(x_new)
        if f_new > f_prev:
            y = x.copy()
            t = 1.0
            g = H @ y - b
            x_new = np.maximum(y - step * g, 0.0)
            f_new = obj(x_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = x_new + ((t - 1.0) / t_new) * (x_new - x)
        x, t, f_prev = x_new, t_new, f_new
        if it % 10 == 0 or it == max_iter:
            res = pg_residual(x, H @ x - b)
            if res <= tol:
                return x, it, True, res
    return x, max_iter, False, res


def nnls(A, r, tol=1e-8, max_iter=None):
    """Minimize ``0.5 ||A x - r||^2`` over ``x >= 0``.

    Uses the Lawson-Hanson active-set method and falls back to accelerated
    projected gradient if that fails or leaves a KKT residual above ``tol``.
    ``tol`` is relative to ``max(1, ||A^T r||)``.
    """
    A = np.asarray(A, dtype=float)
    r = np.asarray(r, dtype=float)
    if A.ndim != 2 or A.shape[0] != r.shape[0]:
        raise ValueError("dimensions of A and r disagree")
    n = A.shape[1]
    H = A.T @ A
    b = A.T @ r
    scale = max(1.0, float(np.linalg.norm(b)))
    if max_iter is None:
        max_iter = max(3 * n, 50)
    try:
        x, _ = optimize.nnls(A, r, maxiter=max_iter)
        it = 0
        ok = True
    except RuntimeError:
        x, it, ok = np.zeros(n), 0, False
    res = pg_residual(x, H @ x - b)
    if not ok or res > tol * scale:
        step = 1.0 / max(spectral_norm(H), np.finfo(float).tiny)
        x, it, ok, res = _projected_gradient(
            H, b, x, step, tol * scale, 50 * max_iter, lambda z: _ls_obj(A, r, z))
    return SolverReport(x, _ls_obj(A, r, x), it, bool(ok), res)


def hybrid_objective(A, r, x_bar, P, mu, x):
    d = x - x_bar
    return _ls_obj(A, r, x) + 0.5 * mu * float(d @ (P @ d))


def hybrid_model_data(A, r, x_bar, P, mu, tol=1e-8, max_iter=20000, x0=None):
    """Minimize ``0.5 ||A x - r||^2 + (mu/2) (x - x_bar)^T P (x - x_bar)`` over ``x >= 0``.

    Accelerated projected gradient with step ``1 / (||A^T A|| + mu ||P||)``.
    ``tol`` bounds the projected-gradient residual relative to
    ``max(1, ||A^T r + mu P x_bar||)``.

    Unless ``x0`` is given, the iteration starts from the active-set solution
    of the equivalent stacked problem
    ``min ||[A; sqrt(mu) L^T] x - [r; sqrt(mu) L^T x_bar]||`` with ``P = L L^T``.
    With small ``mu`` the objective is badly conditioned and plain projected
    gradient would stop far from the minimizer.
    """
    A = np.asarray(A, dtype=float)
    r = np.asarray(r, dtype=float)
    x_bar = np.asarray(x_bar, dtype=float)
    P = np.asarray(P, dtype=float)
    if mu <= 0:
        raise ValueError("mu must be positive")
    if A.shape[0] != r.shape[0] or A.shape[1] != x_bar.shape[0] or P.shape != (x_bar.size,) * 2:
        raise ValueError("dimensions disagree")
    H = A.T @ A + mu * P
    b = A.T @ r + mu * (P @ x_bar)
    L = spectral_norm(A.T @ A) + mu * spectral_norm(P)
    scale = max(1.0, float(np.linalg.norm(b)))
    if x0 is None:
        x0 = _stacked_nnls(A, r, x_bar, P, mu)
    obj = lambda z: hybrid_objective(A, r, x_bar, P, mu, z)  # noqa: E731
    res = pg_residual(np.maximum(x0, 0.0), H @ np.maximum(x0, 0.0) - b)
    if res <= tol * scale:
        x = np.maximum(x0, 0.0)
        return SolverReport(x, obj(x), 0, True, res)
    x, it, ok, res = _projected_gradient(H, b, x0, 1.0 / L, tol * scale, max_iter, obj)
    return SolverReport(x, obj(x), it, ok, res)


def _stacked_nnls(A, r, x_bar, P, mu):
    n = x_bar.size
    try:
        Lp = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError:
        return np.maximum(x_bar, 0.0)
    K = np.sqrt(mu) * Lp.T
    A2 = np.vstack([A, K])
    r2 = np.concatenate([r, K @ x_bar])
    try:
        x, _ = optimize.nnls(A2, r2, maxiter=max(10 * n, 100))
    except RuntimeError:
        return np.maximum(x_bar, 0.0)
    return x
