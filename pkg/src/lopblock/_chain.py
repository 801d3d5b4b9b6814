"""Exact solver for the latent-scale subproblem on a chain.

Solves

    minimize_{s >= 0}  sum_n  a_n / (2 (s_n + shift)) + s_n / 2  +  beta * sum_n |s_{n+1} - s_n|

with a_n >= 0 and shift >= 0.  Every unary derivative has the form
``P - Q / (s + shift)**2`` and that family is closed under addition, so the
derivative messages of the fused-lasso dynamic programme (Johnson, 2013) are
piecewise with exactly two coefficients per piece.  One forward pass and one
backward clipping pass give the minimizer in O(N).
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _deriv(P, Q, s, shift):
    if Q == 0.0:
        return P
    t = s + shift
    if t <= 0.0:
        return -np.inf
    return P - Q / (t * t)


@njit(cache=True)
def _below(P, Q, s, shift, c):
    # delta(s) < c beyond rounding of the summed coefficients
    if Q == 0.0:
        return P < c - 1e-13 * (abs(P) + abs(c))
    t = s + shift
    if t <= 0.0:
        return True
    w = Q / (t * t)
    return P - w < c - 1e-13 * (abs(P) + w + abs(c))


@njit(cache=True)
def _above(P, Q, s, shift, c):
    if Q == 0.0:
        return P > c + 1e-13 * (abs(P) + abs(c))
    t = s + shift
    if t <= 0.0:
        return False
    w = Q / (t * t)
    return P - w > c + 1e-13 * (abs(P) + w + abs(c))


@njit(cache=True)
def _level(P, Q, c, shift):
    # solve P - Q/(s+shift)^2 = c for s; no crossing in the piece if P <= c
    if P <= c:
        return np.inf
    return np.sqrt(Q / (P - c)) - shift


A_FLOOR = 1e-200


@njit(cache=True)
def chain_tv_solve(a, shift, beta):
    # work at unit scale: s(m^2 a, m shift) = m s(a, shift), and drop
    # entries too small to survive squaring inside the messages
    n = a.shape[0]
    m2 = 0.0
    for i in range(n):
        if a[i] > m2:
            m2 = a[i]
    if m2 == 0.0:
        return np.zeros(n)
    m = np.sqrt(m2)
    b = np.empty(n)
    for i in range(n):
        v = a[i] / m2
        b[i] = v if v >= A_FLOOR else 0.0
    out = _tv_solve_unit(b, shift / m, beta)
    for i in range(n):
        out[i] *= m
    return out


@njit(cache=True)
def _tv_solve_unit(a, shift, beta):
    n = a.shape[0]
    out = np.zeros(n)
    if n == 0:
        return out
    size = 2 * n + 2
    kx = np.empty(size)
    kp = np.empty(size)
    kq = np.empty(size)
    lo_idx = n + 1
    hi_idx = n  # empty deque: lo_idx > hi_idx
    bminus = np.zeros(n)
    bplus = np.zeros(n)
    PL = 0.0
    QL = 0.0
    PR = 0.0
    QR = 0.0
    for i in range(n):
        qi = 0.5 * a[i]
        PL += 0.5
        QL += qi
        PR += 0.5
        QR += qi
        if i == n - 1:
            break

        # right end first: with beta = 0 a left clip would mask the crossing
        # smallest s >= 0 with delta(s) >= beta
        if PR <= beta:
            bplus[i] = np.inf
        else:
            P = PR
            Q = QR
            right = np.inf
            while lo_idx <= hi_idx and _above(P, Q, kx[hi_idx], shift, beta):
                right = kx[hi_idx]
                P -= kp[hi_idx]
                Q -= kq[hi_idx]
                hi_idx -= 1
            if lo_idx <= hi_idx:
                left = kx[hi_idx]
            else:
                # only the leftmost piece is left; its tracked coefficients
                # avoid the cancellation of the popped increments
                left = 0.0
                P = PL
                Q = QL
            if _deriv(P, Q, left, shift) >= beta:
                s = left
            elif Q <= 0.0:
                s = left
            else:
                s = _level(P, Q, beta, shift)
                if s < left:
                    s = left
                if s > right:
                    s = right
            bplus[i] = s
            if lo_idx > hi_idx and s == 0.0:
                # delta >= beta on the whole half line
                PL = beta
                QL = 0.0
            else:
                hi_idx += 1
                kx[hi_idx] = s
                kp[hi_idx] = beta - P
                kq[hi_idx] = -Q
            PR = beta
            QR = 0.0


        # left end: smallest s >= 0 with delta(s) >= -beta
        if _deriv(PL, QL, 0.0, shift) >= -beta:
            bminus[i] = 0.0
        else:
            P = PL
            Q = QL
            left = 0.0
            while lo_idx <= hi_idx and _below(P, Q, kx[lo_idx], shift, -beta):
                left = kx[lo_idx]
                P += kp[lo_idx]
                Q += kq[lo_idx]
                lo_idx += 1
            if lo_idx <= hi_idx:
                right = kx[lo_idx]
            else:
                right = np.inf
                P = PR
                Q = QR
            if Q == 0.0 or _deriv(P, Q, left, shift) >= -beta:
                s = left
            else:
                s = _level(P, Q, -beta, shift)
                if s < left:
                    s = left
                if s > right:
                    s = right
            bminus[i] = s
            lo_idx -= 1
            kx[lo_idx] = s
            kp[lo_idx] = P + beta
            kq[lo_idx] = Q
            PL = -beta
            QL = 0.0

    # last coordinate: smallest s >= 0 with delta(s) >= 0
    if _deriv(PL, QL, 0.0, shift) >= 0.0:
        s = 0.0
    else:
        P = PL
        Q = QL
        left = 0.0
        while lo_idx <= hi_idx and _below(P, Q, kx[lo_idx], shift, 0.0):
            left = kx[lo_idx]
            P += kp[lo_idx]
            Q += kq[lo_idx]
            lo_idx += 1
        if lo_idx <= hi_idx:
            right = kx[lo_idx]
        else:
            right = np.inf
            P = PR
            Q = QR
        if Q == 0.0 or _deriv(P, Q, left, shift) >= 0.0:
            s = left
        else:
            s = _level(P, Q, 0.0, shift)
            if s < left:
                s = left
            if s > right:
                s = right
    out[n - 1] = s
    for i in range(n - 2, -1, -1):
        s = out[i + 1]
        if s < bminus[i]:
            s = bminus[i]
        if s > bplus[i]:
            s = bplus[i]
        out[i] = s
    return out


@njit(cache=True)
def _negligible(a):
    # entries the solver treats as zero, relative to the largest one
    m2 = 0.0
    for i in range(a.shape[0]):
        if a[i] > m2:
            m2 = a[i]
    return A_FLOOR * m2


@njit(cache=True)
def chain_objective(a, shift, beta, s):
    total = 0.0
    n = a.shape[0]
    floor = _negligible(a)
    for i in range(n):
        t = s[i] + shift
        if a[i] > 0.0:
            if t <= 0.0:
                if a[i] < floor:
                    continue
                return np.inf
            total += a[i] / (2.0 * t)
        total += 0.5 * s[i]
    for i in range(n - 1):
        total += beta * abs(s[i + 1] - s[i])
    return total


@njit(cache=True)
def _dual_term(a, shift, c):
    # min_{s >= 0} a/(2(s+shift)) + (1/2 + c) s
    k = 0.5 + c
    if k < 0.0:
        if k > -1e-10:
            k = 0.0
        else:
            return -np.inf
    if a == 0.0:
        return 0.0
    if k == 0.0:
        return 0.0
    s = np.sqrt(a / (2.0 * k)) - shift
    if s >= 0.0:
        return np.sqrt(2.0 * a * k) - k * shift
    return a / (2.0 * shift)


@njit(cache=True)
def chain_dual_gap(a, shift, beta, s):
    """Duality gap of ``s`` using multipliers rebuilt from the stationarity chain."""
    n = a.shape[0]
    if n == 0:
        return 0.0
    u = np.zeros(n + 1)  # u[i+1] pairs with s[i+1] - s[i]; u[0] = u[n] = 0
    floor = _negligible(a)
    for i in range(n - 1):
        g = 0.5
        if a[i] >= floor and a[i] > 0.0:
            t = s[i] + shift
            g -= a[i] / (2.0 * t * t)
        # clipping also absorbs the multiplier of s_i >= 0 when s_i = 0
        v = u[i] + g
        if v > beta:
            v = beta
        if v < -beta:
            v = -beta
        u[i + 1] = v
    dual = 0.0
    for i in range(n):
        c = u[i] - u[i + 1]
        dual += _dual_term(a[i] if a[i] >= floor else 0.0, shift, c)
    primal = chain_objective(a, shift, beta, s)
    return primal - dual


@njit(cache=True)
def chain_prox(xbar, gamma, beta):
    """Joint minimizer of 0.5||x - xbar||^2 + gamma * (sum phi(x, s) + beta ||Ds||_1)."""
    a = xbar * xbar
    s = chain_tv_solve(a, gamma, beta)
    x = np.empty_like(xbar)
    for i in range(xbar.shape[0]):
        if s[i] > 0.0:
            x[i] = xbar[i] * s[i] / (s[i] + gamma)
        else:
            x[i] = 0.0
    return x, s


@njit(cache=True)
def chain_prox_nonneg(xbar, gamma, beta):
    """Same as :func:`chain_prox` with the extra constraint x >= 0."""
    z = np.maximum(xbar, 0.0)
    return chain_prox(z, gamma, beta)


@njit(cache=True)
def lop_objective_value(x, beta):
    """min_s sum phi(x_n, s_n) + beta ||Ds||_1, evaluated with the exact chain solver."""
    a = x * x
    s = chain_tv_solve(a, 0.0, beta)
    return chain_objective(a, 0.0, beta, s)
