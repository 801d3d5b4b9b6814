"""Generalized Moreau enhancement (GME) of the LOP penalty and the
APS estimation solver built on it.

The enhanced penalty is

    Psi_B(x) = psi(x) - min_v [ psi(v) + 0.5 ||B (x - v)||^2 ]

where ``psi`` is the penalized LOP value function.  With
``B^T B = (omega / lambda) (A^T A + mu P)`` and ``omega`` in [0, 1] the full
estimation objective stays convex, and its minimizer is found from the
saddle formulation

    min_{x >= 0} max_v  0.5 x^T H x - b^T x + lambda psi(x) - lambda psi(v)
                        - (omega / 2) (x - v)^T H (x - v)

with ``H = A^T A + mu P`` and ``b = A^T r + mu P x_bar``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit
from scipy import linalg

from ._chain import chain_objective, chain_prox, chain_prox_nonneg, chain_tv_solve
from .baselines import hybrid_model_data, spectral_norm
from .penalty import ConvergenceWarning, lop_value

__all__ = [
    "GmeConfig",
    "SaddleState",
    "BoundednessReport",
    "build_B_factor",
    "gme_value",
    "check_boundedness",
    "solve_aps_problem",
    "aps_objective",
]


@dataclass
class GmeConfig:
    omega: float = 0.0
    lam: float = 1e-3
    mu: float = 1e-3
    beta: float = 0.01
    tol: float = 1e-7
    max_iter: int = 20000

    def __post_init__(self):
        if not 0.0 <= self.omega <= 1.0:
            raise ValueError("omega must lie in [0, 1] for the objective to stay convex")
        if self.lam <= 0 or self.mu <= 0:
            raise ValueError("lambda and mu must be positive")
        if self.beta < 0:
            raise ValueError("beta must be nonnegative")


@dataclass
class SaddleState:
    x: np.ndarray
    v: np.ndarray
    sigma_x: np.ndarray
    sigma_v: np.ndarray
    primal_residual: float
    dual_residual: float
    iteration: int
    converged: bool = True
    history: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))


@dataclass
class BoundednessReport:
    precondition_ok: bool
    bounded: bool | None
    max_value: float
    values: np.ndarray
    scales: tuple
    condition_number: float


def _check_spd(P):
    P = np.asarray(P, dtype=float)
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValueError("P must be square")
    if not np.allclose(P, P.T, rtol=1e-10, atol=1e-12 * max(1.0, np.abs(P).max())):
        raise ValueError("P must be symmetric")
    try:
        linalg.cholesky(P, lower=True)
    except linalg.LinAlgError:
        raise ValueError("P must be positive definite") from None
    return P


def build_B_factor(A, P, cfg):
    """Factor ``B`` with ``B^T B = (omega / lambda)(A^T A + mu P)``.

    Built from the Cholesky factor ``H = L L^T`` as ``sqrt(omega / lambda) L^T``.
    """
    A = np.asarray(A, dtype=float)
    P = _check_spd(P)
    if A.shape[1] != P.shape[0]:
        raise ValueError("A and P dimensions disagree")
    n = P.shape[0]
    if cfg.omega == 0.0:
        return np.zeros((n, n))
    H = A.T @ A + cfg.mu * P
    H = 0.5 * (H + H.T)
    L = linalg.cholesky(H, lower=True)
    return math.sqrt(cfg.omega / cfg.lam) * L.T


@njit(cache=True)
def _psi(z, beta):
    a = z * z
    return chain_objective(a, 0.0, beta, chain_tv_solve(a, 0.0, beta))


@njit(cache=True)
def _quad(G, d):
    return d @ (G @ d)


@njit(cache=True)
def _envelope_pg(x, G, step, beta, tol, max_iter):
    # FISTA on v -> psi(v) + 0.5 (x - v)^T G (x - v), monotone restart
    v = x.copy()
    y = x.copy()
    t = 1.0

    fv = _psi(v, beta)
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        g = G @ (y - x)
        v_new, _ = chain_prox(y - step * g, step, beta)
        f_new = _psi(v_new, beta) + 0.5 * _quad(G, x - v_new)
        if f_new > fv:
            y = v.copy()
            t = 1.0
            g = G @ (y - x)
            v_new, _ = chain_prox(y - step * g, step, beta)
            f_new = _psi(v_new, beta) + 0.5 * _quad(G, x - v_new)
        t_new = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = v_new + ((t - 1.0) / t_new) * (v_new - v)
        change = abs(fv - f_new)
        v = v_new
        fv_old = fv
        fv = f_new
        t = t_new
        if change <= tol * max(1.0, abs(fv)) and fv <= fv_old:
            converged = True
            break
    return v, fv, it, converged


def gme_value(x, B, beta, tol=1e-10, max_iter=20000, full_output=False):
    """Enhanced penalty ``psi(x) - min_v [psi(v) + 0.5 ||B (x - v)||^2]``.

    The inner minimum is found by accelerated proximal gradient on ``v``,
    started at ``v = x``, with step ``1 / ||B^T B||``, until the relative
    objective change drops below ``tol``.  Since every ``v`` only bounds the
    inner minimum from above, the returned value never exceeds the exact one.
    """
    x = np.asarray(x, dtype=float)
    B = np.asarray(B, dtype=float)
    if B.ndim != 2 or B.shape[1] != x.size:
        raise ValueError("B must have len(x) columns")
    beta = float(beta)
    psi_x = lop_value(x, beta)
    G = B.T @ B
    if not np.any(G) or not np.any(x):
        # inner minimum is psi(0) = 0 when B = 0; Psi(0) = 0 by construction
        out = psi_x if np.any(x) else 0.0
        info = {"v": np.zeros_like(x), "inner": 0.0, "iterations": 0, "converged": True}
        return (out, info) if full_output else out
    step = 1.0 / spectral_norm(G)
    v, inner, it, ok = _envelope_pg(x, G, step, beta, tol, max_iter)
    if not ok:
        warnings.warn("envelope inner problem did not converge", ConvergenceWarning, stacklevel=2)
    val = max(psi_x - inner, 0.0)
    if full_output:
        return val, {"v": v, "inner": float(inner), "iterations": int(it), "converged": bool(ok)}
    return val


def check_boundedness(B, beta, probe_directions=10, scales=(1.0, 10.0, 100.0, 1000.0),
                      rng=None, directions=None, tol=1e-8, cond_limit=1e12):
    """Probe ``Psi_B`` along rays ``t * u`` for growth.

    A ray counts as bounded when the value at the largest scale is at most
    ``1.05`` times the maximum over the smaller scales plus ``tol``.  Without
    explicit ``directions``, a singular ``B^T B`` is reported as a failed
    precondition and nothing is evaluated; explicit directions are always
    evaluated so that kernel rays of a rank-deficient ``B`` can be probed.
    """
    B = np.asarray(B, dtype=float)
    n = B.shape[1]
    G = B.T @ B
    w = np.linalg.eigvalsh(0.5 * (G + G.T))
    cond = math.inf if w[0] <= 0 else float(w[-1] / w[0])
    pre_ok = bool(cond < cond_limit)
    scales = tuple(float(s) for s in scales)
    if directions is None:
        if not pre_ok:
            return BoundednessReport(False, None, math.nan, np.zeros((0, len(scales))),
                                     scales, cond)
        rng = np.random.default_rng(0) if rng is None else rng
        directions = rng.standard_normal((probe_directions, n))
    directions = np.atleast_2d(np.asarray(directions, dtype=float))
    values = np.array([[gme_value(t * u, B, beta) for t in scales] for u in directions])
    head = values[:, :-1].max(axis=1) if len(scales) > 1 else np.zeros(len(values))
    ok = values[:, -1] <= 1.05 * head + tol
    return BoundednessReport(pre_ok, bool(np.all(ok)), float(values.max()), values, scales, cond)


def aps_objective(x, A, r, x_bar, P, cfg, B=None):
    """``0.5 ||A x - r||^2 + (mu/2) ||x - x_bar||_P^2 + lambda Psi_B(x)``; inf off the orthant."""
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        return math.inf
    if B is None:
        B = build_B_factor(A, P, cfg)
    res = A @ x - r
    d = x - x_bar
    smooth = 0.5 * float(res @ res) + 0.5 * cfg.mu * float(d @ (P @ d))
    return smooth + cfg.lam * gme_value(x, B, cfg.beta)


@njit(cache=True)
def _saddle_loop(H, b, x0, v0, omega, lam, beta, tau, nu, tol, max_iter, hist):
    x = x0.copy()
    v = v0.copy()
    sx = np.zeros_like(x)
    sv = np.zeros_like(v)
    rp = np.inf
    rd = 0.0
    it = 0
    converged = False
    for it in range(1, max_iter + 1):
        grad = H @ ((1.0 - omega) * x + omega * v) - b
        x_new, sx = chain_prox_nonneg(x - tau * grad, tau * lam, beta)
        if omega > 0.0:
            gv = omega * (H @ (v - (2.0 * x_new - x)))
            v_new, sv = chain_prox(v - nu * gv, nu * lam, beta)
            rd = np.linalg.norm(v_new - v) / max(np.linalg.norm(v_new), 1e-300)
            v = v_new
        rp = np.linalg.norm(x_new - x) / max(np.linalg.norm(x_new), 1e-300)
        x = x_new
        if it <= hist.shape[0]:
            hist[it - 1, 0] = rp
            hist[it - 1, 1] = rd
        if max(rp, rd) <= tol:
            converged = True
            break
    return x, v, sx, sv, rp, rd, it, converged


def solve_aps_problem(A, r, x_bar, P, cfg, x0=None, v0=None, record=0):
    """Minimize ``0.5 ||Ax - r||^2 + (mu/2)||x - x_bar||_P^2 + lambda Psi_B(x)`` over ``x >= 0``.

    Primal-dual forward-backward iteration on the saddle formulation (see the
    module docstring) with steps

        tau = 0.99 / ((1 + omega) h),   nu = 0.5 / (omega h),   h >= ||H||_2,

    so that ``tau (||H|| + lambda ||B^T B||) < 1`` and
    ``nu lambda ||B^T B|| < 1``.  Both proximal steps are exact LOP proximity
    operators, the primal one including the nonnegativity constraint.  The
    iteration stops once the relative changes of both blocks are at most
    ``cfg.tol``.  ``x`` is warm-started at the hybrid (``lambda = 0``)
    solution unless ``x0`` is given.

    Returns
    -------
    x_hat : ndarray
    state : SaddleState
        ``history`` holds the first ``record`` (primal, dual) residual pairs.
    """
    A = np.asarray(A, dtype=float)
    r = np.asarray(r, dtype=float)
    x_bar = np.asarray(x_bar, dtype=float)
    P = _check_spd(P)
    n = x_bar.size
    if A.shape != (r.size, n) or P.shape != (n, n):
        raise ValueError("dimensions disagree")
    H = A.T @ A + cfg.mu * P
    H = 0.5 * (H + H.T)
    b = A.T @ r + cfg.mu * (P @ x_bar)
    h = spectral_norm(H) * (1.0 + 1e-6)
    omega = float(cfg.omega)
    tau = 0.99 / ((1.0 + omega) * h)
    nu = 0.5 / (omega * h) if omega > 0 else 0.0
    if x0 is None:
        x0 = hybrid_model_data(A, r, x_bar, P, cfg.mu, tol=1e-10).x_hat
    x0 = np.maximum(np.asarray(x0, dtype=float), 0.0)
    v0 = x0.copy() if v0 is None else np.asarray(v0, dtype=float)
    if omega == 0.0:
        v0 = np.zeros(n)
    hist = np.zeros((int(record), 2))
    x, v, sx, sv, rp, rd, it, ok = _saddle_loop(
        H, b, x0, v0, omega, float(cfg.lam), float(cfg.beta), tau, nu,
        float(cfg.tol), int(cfg.max_iter), hist)
    if not ok:
        warnings.warn("APS solver reached max_iter", ConvergenceWarning, stacklevel=2)
    state = SaddleState(x, v, sx, sv, float(rp), float(rd), int(it), bool(ok),
                        hist[:min(int(it), hist.shape[0])])
    return x, state
