"""Block-sparsity penalties: mixed l2/l1 norm, the latent optimally
partitioned (LOP) l2/l1 penalty, its exact nonconvex counterpart and the
proximity operator used by the solvers.

Indices are 0-based throughout; a block ``(start, end)`` is inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._chain import (
    chain_dual_gap,
    chain_objective,
    chain_prox,
    chain_tv_solve,
)

__all__ = [
    "BlockPartition",
    "PenaltyEvaluation",
    "ConvergenceWarning",
    "phi",
    "mixed_l21",
    "latent_objective",
    "eval_lop_penalized",
    "eval_lop_constrained",
    "nonconvex_oracle",
    "prox_lop",
    "lop_value",
]


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class BlockPartition:
    """Ordered contiguous blocks over an index set.

    Parameters
    ----------
    blocks : tuple of (start, end)
        Inclusive, 0-based index ranges, sorted and disjoint.
    size : int
        Length ``N`` of the ambient vector.
    """

    blocks: tuple
    size: int

    def __post_init__(self):
        blocks = tuple((int(s), int(e)) for s, e in self.blocks)
        object.__setattr__(self, "blocks", blocks)
        prev_end = -1
        for s, e in blocks:
            if s > e:
                raise ValueError(f"empty block ({s}, {e})")
            if s <= prev_end:
                raise ValueError("blocks must be sorted and disjoint")
            prev_end = e
        if blocks and (blocks[0][0] < 0 or blocks[-1][1] >= self.size):
            raise ValueError("block outside the index range")

    @classmethod
    def from_sizes(cls, sizes, offset=0, size=None):
        blocks = []
        start = offset
        for n in sizes:
            blocks.append((start, start + int(n) - 1))
            start += int(n)
        return cls(tuple(blocks), start if size is None else size)

    @classmethod
    def singletons(cls, n):
        return cls(tuple((i, i) for i in range(n)), n)

    def __len__(self):
        return len(self.blocks)

    def __iter__(self):
        return iter(self.blocks)

    @property
    def lengths(self):
        return np.array([e - s + 1 for s, e in self.blocks])

    def indices(self):
        """All covered indices in ascending order."""
        if not self.blocks:
            return np.zeros(0, dtype=int)
        return np.concatenate([np.arange(s, e + 1) for s, e in self.blocks])

    def covers(self, index_set):
        idx = np.asarray(sorted(index_set), dtype=int)
        return np.array_equal(self.indices(), idx)

    def split_points(self):
        return tuple(e + 1 for _, e in self.blocks[:-1])

    def to_dict(self):
        return {"size": self.size, "blocks": [list(b) for b in self.blocks]}


@dataclass
class PenaltyEvaluation:
    """Result of evaluating the LOP penalty at one point.

    ``value`` is the optimal value of the latent problem that was solved (the
    Lagrangian objective in the penalized form, the penalty itself in the
    constrained form).  ``penalty`` is always ``sum_n phi(x_n, sigma_n)`` at
    ``sigma_hat``, i.e. the penalty value for the total-variation budget
    ``alpha = ||D sigma_hat||_1``.
    """

    value: float
    sigma_hat: np.ndarray
    beta: float
    alpha: float
    iterations: int
    residual: float
    penalty: float = 0.0
    converged: bool = True
    extras: dict = field(default_factory=dict)


def phi(x, sigma):
    """Perspective-type function x^2/(2 sigma) + sigma/2 with its closure at 0.

    Returns ``math.inf`` outside the domain.
    """
    x = float(x)
    sigma = float(sigma)
    if sigma > 0.0:
        return x * x / (2.0 * sigma) + sigma / 2.0
    if x == 0.0 and sigma == 0.0:
        return 0.0
    return math.inf


def _as_signal(x):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size == 0:
        raise ValueError("signal must be a nonempty 1-D array")
    if not np.all(np.isfinite(x)):
        raise ValueError("signal entries must be finite")
    return x


def mixed_l21(x, partition):
    """sum_k sqrt(|B_k|) ||x_{B_k}||_2 for a partition of all of ``x``."""
    x = _as_signal(x)
    if partition.size != x.size or not partition.covers(range(x.size)):
        raise ValueError("partition does not cover the signal indices")
    return float(sum(math.sqrt(e - s + 1) * np.linalg.norm(x[s:e + 1])
                     for s, e in partition))


def latent_objective(x, sigma, beta=0.0):
    """sum_n phi(x_n, sigma_n) + beta ||D sigma||_1 (``inf`` off the domain)."""
    x = _as_signal(x)
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma < 0):
        return math.inf
    total = sum(phi(a, b) for a, b in zip(x, sigma))
    return total + beta * float(np.abs(np.diff(sigma)).sum())


def _tv(sigma):
    return float(np.abs(np.diff(sigma)).sum())


def eval_lop_penalized(x, beta, tol=1e-8, max_iter=1):
    """Minimize ``sum_n phi(x_n, sigma_n) + beta ||D sigma||_1`` over sigma.

    The chain structure is solved exactly by a derivative-message dynamic
    programme; ``residual`` is the duality gap of the returned sigma, which is
    compared against ``tol * max(1, value)``.  ``max_iter`` is kept for API
    symmetry with iterative evaluators; the solver is direct.
    """
    x = _as_signal(x)
    beta = float(beta)
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if not np.any(x):
        return PenaltyEvaluation(0.0, np.zeros_like(x), beta, 0.0, 0, 0.0, 0.0)
    a = x * x
    sigma = chain_tv_solve(a, 0.0, beta)
    value = float(chain_objective(a, 0.0, beta, sigma))
    gap = max(float(chain_dual_gap(a, 0.0, beta, sigma)), 0.0)
    tv = _tv(sigma)
    converged = gap <= tol * max(1.0, value)
    return PenaltyEvaluation(value, sigma, beta, tv, 1, gap,
                             penalty=value - beta * tv, converged=converged)


def lop_value(x, beta):
    """Fast scalar version of :func:`eval_lop_penalized` (objective value only)."""
    a = np.asarray(x, dtype=float) ** 2
    sigma = chain_tv_solve(a, 0.0, float(beta))
    return float(chain_objective(a, 0.0, float(beta), sigma))


def _phi_sum(x, sigma):
    a = x * x
    return float(chain_objective(a, 0.0, 0.0, sigma))


def eval_lop_constrained(x, alpha, tol=1e-9, bisection_steps=60):
    """Evaluate the constrained LOP penalty ``psi_alpha(x)``.

    The multiplier ``beta`` of the total-variation budget is located by
    bisection on the penalized form: ``||D sigma(beta)||_1`` is nonincreasing
    in ``beta``.  ``residual`` is the gap between the returned value and the
    best Lagrangian lower bound ``value(beta) - beta * alpha`` seen.
    """
    x = _as_signal(x)
    alpha = float(alpha)
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    if tol <= 0:
        raise ValueError("tol must be positive")
    n = x.size
    if not np.any(x):
        return PenaltyEvaluation(0.0, np.zeros_like(x), 0.0, alpha, 0, 0.0, 0.0)
    if alpha == 0.0:
        level = np.linalg.norm(x) / math.sqrt(n)
        value = math.sqrt(n) * float(np.linalg.norm(x))
        return PenaltyEvaluation(value, np.full(n, level), math.inf, 0.0, 0,
                                 0.0, penalty=value)

    def solve(beta):
        sigma = chain_tv_solve(x * x, 0.0, beta)
        return sigma, _tv(sigma), _phi_sum(x, sigma)

    sigma0, tv0, phi0 = solve(0.0)
    if tv0 <= alpha:
        return PenaltyEvaluation(phi0, sigma0, 0.0, alpha, 1, 0.0, penalty=phi0)

    lower = -math.inf
    beta_lo, beta_hi = 0.0, 1.0
    sig_lo, tv_lo = sigma0, tv0
    its = 1
    while True:
        sig_hi, tv_hi, phi_hi = solve(beta_hi)
        its += 1
        lower = max(lower, phi_hi + beta_hi * tv_hi - beta_hi * alpha)
        if tv_hi <= alpha:
            break
        beta_lo, sig_lo, tv_lo = beta_hi, sig_hi, tv_hi
        beta_hi *= 2.0
    for _ in range(bisection_steps):
        mid = 0.5 * (beta_lo + beta_hi)
        sig, tv, ph = solve(mid)
        its += 1
        lower = max(lower, ph + mid * tv - mid * alpha)
        if tv <= alpha:
            beta_hi, sig_hi, tv_hi, phi_hi = mid, sig, tv, ph
        else:
            beta_lo, sig_lo, tv_lo = mid, sig, tv
        if tv_lo - tv_hi <= tol * max(1.0, alpha):
            break

    sigma = sig_hi
    if alpha - tv_hi > tol * max(1.0, alpha):
        # the budget sits on a jump of beta -> ||D sigma(beta)||_1: mix the two
        # Lagrangian minimizers on either side of it
        t_lo, t_hi = 0.0, 1.0
        for _ in range(100):
            t = 0.5 * (t_lo + t_hi)
            if _tv(t * sig_lo + (1 - t) * sig_hi) <= alpha:
                t_lo = t
            else:
                t_hi = t
        sigma = t_lo * sig_lo + (1 - t_lo) * sig_hi
    value = _phi_sum(x, sigma)
    residual = max(value - lower, 0.0)
    converged = residual <= tol * max(1.0, value)
    return PenaltyEvaluation(value, sigma, beta_hi, alpha, its, residual,
                             penalty=value, converged=converged)


def _block_costs(x):
    """cost[i, j] = sqrt(j - i) * ||x[i:j]||_2 for 0 <= i < j <= N."""
    n = x.size
    sq = x * x
    cost = np.full((n + 1, n + 1), np.inf)
    for i in range(n):
        run = np.sqrt(np.cumsum(sq[i:]))
        cost[i, i + 1:] = np.sqrt(np.arange(1, n - i + 1)) * run
    return cost


def nonconvex_oracle(x, max_blocks):
    """Exact minimum of the mixed norm over contiguous partitions with at most
    ``max_blocks`` blocks, by dynamic programming over split points.

    Ties are resolved towards fewer blocks, then earlier split points.
    """
    x = _as_signal(x)
    n = x.size
    K = int(max_blocks)
    if not 1 <= K <= n:
        raise ValueError("max_blocks must lie in [1, N]")
    cost = _block_costs(x)
    # best[j, s]: cheapest split of x[s:] into exactly j blocks
    best = np.full((K + 1, n + 1), np.inf)
    best[1, :n] = cost[:n, n]
    for j in range(2, K + 1):
        for s in range(n - j + 1):
            ends = np.arange(s + 1, n - j + 2)
            best[j, s] = np.min(cost[s, ends] + best[j - 1, ends])
    totals = best[1:, 0]
    value = float(np.min(totals))
    tie = 1e-12 * max(1.0, value)
    j = int(np.flatnonzero(totals <= value + tie)[0]) + 1
    blocks = []
    s = 0
    target = best[j, 0]
    for left in range(j, 1, -1):
        for e in range(s + 1, n - left + 2):
            if cost[s, e] + best[left - 1, e] <= target + tie:
                break
        blocks.append((s, e - 1))
        target = best[left - 1, e]
        s = e
    blocks.append((s, n - 1))
    return float(best[j, 0]), BlockPartition(tuple(blocks), n)


def prox_lop(x_bar, gamma, beta, tol=1e-8, max_iter=1):
    """Proximity operator of ``gamma * psi_beta`` with the latent variable.

    Returns ``(x, sigma)`` jointly minimizing
    ``0.5 ||x - x_bar||^2 + gamma (sum phi(x_n, sigma_n) + beta ||D sigma||_1)``.
    For fixed sigma the x-minimizer is ``x_bar * sigma / (sigma + gamma)``;
    substituting it leaves a chain problem in sigma alone that is solved
    exactly, so no alternation is needed.
    """
    x_bar = _as_signal(x_bar)
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    x, sigma = chain_prox(x_bar, float(gamma), float(beta))
    return x, sigma
