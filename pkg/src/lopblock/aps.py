"""Angular power spectrum (APS) simulation for a uniform linear array.

Covers the observation pipeline used by the benchmark: directive array
responses, channel covariance built from an APS, sampled channels with
additive noise, structured covariance estimation by Halpern iterations
between the Toeplitz and PSD sets, and extraction of the real linear system
``r = A x``.  Also generates random APS and summarizes APS datasets.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

__all__ = [
    "ArrayConfig",
    "APSSpec",
    "CovarianceEstimate",
    "ObservationSystem",
    "DatasetStats",
    "array_response",
    "steering_matrix",
    "sample_aps",
    "aps_from_spec",
    "true_covariance",
    "sample_channels",
    "complex_noise",
    "estimate_covariance",
    "project_toeplitz",
    "project_psd",
    "halpern_project",
    "toeplitz_distance",
    "psd_distance",
    "extract_observation",
    "observation_matrix",
    "dataset_stats",
    "snr_noise_variance",
    "matrix_to_json",
    "matrix_from_json",
    "write_dataset_csv",
    "read_dataset_csv",
]

SPEED_OF_LIGHT = 3e8


def default_grid(n=100):
    return np.linspace(-math.pi / 2, math.pi / 2, n)


@dataclass
class ArrayConfig:
    """Uniform linear array of directive elements and the angular grid."""

    M: int = 8
    carrier_frequency_hz: float = 2.1e9
    antenna_spacing_m: float | None = None
    theta_3db_rad: float = math.radians(65.0)
    sla_db: float = 30.0
    grid: np.ndarray = field(default_factory=default_grid)

    def __post_init__(self):
        if self.M < 1:
            raise ValueError("M must be positive")
        if self.antenna_spacing_m is None:
            self.antenna_spacing_m = self.wavelength / 2
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 1 or np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        if self.grid[0] < -math.pi / 2 - 1e-12 or self.grid[-1] > math.pi / 2 + 1e-12:
            raise ValueError("grid must lie in [-pi/2, pi/2]")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_frequency_hz

    @property
    def N(self):
        return self.grid.size


@dataclass
class APSSpec:
    amplitudes: np.ndarray
    centers: np.ndarray
    widths: np.ndarray

    @property
    def Q(self):
        return len(self.amplitudes)


@dataclass
class CovarianceEstimate:
    R_hat: np.ndarray
    T: int
    noise_variance: float
    projection_iterations: int
    toeplitz_distance: float = 0.0
    psd_distance: float = 0.0


@dataclass
class ObservationSystem:
    A: np.ndarray
    r_hat: np.ndarray

    @property
    def M_bar(self):
        return self.r_hat.size


@dataclass
class DatasetStats:
    x_bar: np.ndarray
    C: np.ndarray
    P: np.ndarray
    L: int
    delta: float


def gain_db(theta, cfg):
    theta = np.asarray(theta, dtype=float)
    return -np.minimum(12.0 * (theta / cfg.theta_3db_rad) ** 2, cfg.sla_db)


def steering_matrix(theta, cfg):
    """Array responses as columns, shape ``(M, len(theta))``."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if np.any(np.abs(theta) > math.pi / 2 + 1e-12):
        raise ValueError("angles must lie in [-pi/2, pi/2]")
    # power pattern in dB, applied as an amplitude factor
    amp = 10.0 ** (gain_db(theta, cfg) / 20.0)
    m = np.arange(cfg.M)[:, None]
    ratio = cfg.antenna_spacing_m / cfg.wavelength
    phase = np.exp(2j * math.pi * ratio * m * np.sin(theta)[None, :])
    return amp[None, :] * phase / math.sqrt(cfg.M)


def array_response(theta, cfg):
    return steering_matrix([theta], cfg)[:, 0]


def aps_from_spec(spec, grid):
    """Gaussian-mixture APS sampled pointwise on the grid."""
    grid = np.asarray(grid, dtype=float)
    x = np.zeros_like(grid)
    for a, mu, sd in zip(spec.amplitudes, spec.centers, spec.widths):
        x += a * np.exp(-0.5 * ((grid - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))
    return x


POLICIES = {
    "true": {"Q": (1, 2), "center": (-2 * math.pi / 5, -math.pi / 5)},
    "dataset": {"Q": (1, 5), "center": (-2 * math.pi / 5, 2 * math.pi / 5)},
}
WIDTH_RANGE = (math.radians(2.0), math.radians(4.0))


def sample_aps(policy, rng, grid=None):
    """Draw a random APS under the ``"true"`` or ``"dataset"`` policy."""
    try:
        pol = POLICIES[policy]
    except KeyError:
        raise ValueError(f"unknown policy {policy!r}") from None
    grid = default_grid() if grid is None else grid
    Q = int(rng.integers(pol["Q"][0], pol["Q"][1] + 1))
    a = rng.uniform(0.0, 1.0, Q)
    a = a / a.sum()
    centers = rng.uniform(*pol["center"], Q)
    widths = rng.uniform(*WIDTH_RANGE, Q)
    spec = APSSpec(a, centers, widths)
    return aps_from_spec(spec, grid), spec


def true_covariance(x_star, cfg):
    x_star = np.asarray(x_star, dtype=float)
    if np.any(x_star < 0):
        raise ValueError("APS must be nonnegative")
    S = steering_matrix(cfg.grid, cfg)
    R = (S * x_star[None, :]) @ S.conj().T
    return 0.5 * (R + R.conj().T)


def complex_noise(shape, variance, rng):
    """Circularly-symmetric complex Gaussian with per-entry ``variance``."""
    scale = math.sqrt(variance / 2.0)
    return scale * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))


def sample_channels(R, T, s2, rng):
    """Draw ``T`` noisy channel vectors ``h + n`` as columns, shape ``(M, T)``."""
    R = np.asarray(R)
    if T < 1:
        raise ValueError("T must be positive")
    if s2 < 0:
        raise ValueError("noise variance must be nonnegative")
    w, V = linalg.eigh(0.5 * (R + R.conj().T))
    if w.size and w.min() < -1e-8 * max(1.0, abs(w).max()):
        raise ValueError("covariance is not positive semidefinite")
    root = V * np.sqrt(np.clip(w, 0.0, None))[None, :]
    M = R.shape[0]
    h = root @ complex_noise((M, T), 1.0, rng)
    if s2 > 0:
        h = h + complex_noise((M, T), s2, rng)
    return h


def snr_noise_variance(channel_samples, snr_db, dim=None):
    """Noise variance giving ``mean ||h_t||^2 / dim / s2`` equal to the SNR.

    ``dim`` defaults to the number of antennas (rows of the samples).
    """
    h = np.asarray(channel_samples)
    if dim is None:
        dim = h.shape[0]
    power = float(np.mean(np.sum(np.abs(h) ** 2, axis=0)))
    return power / (dim * 10.0 ** (snr_db / 10.0))


def project_toeplitz(M_in):
    """Average every diagonal; keeps Hermitian inputs Hermitian."""
    M_in = np.asarray(M_in)
    n = M_in.shape[0]
    out = np.empty_like(M_in)
    for k in range(-n + 1, n):
        d = np.diagonal(M_in, k).mean()
        idx = np.arange(max(0, -k), min(n, n - k))
        out[idx, idx + k] = d
    return out


def project_psd(M_in):
    """Clamp negative eigenvalues of a Hermitian matrix to zero."""
    H = 0.5 * (M_in + M_in.conj().T)
    w, V = np.linalg.eigh(H)
    out = (V * np.clip(w, 0.0, None)[None, :]) @ V.conj().T
    return 0.5 * (out + out.conj().T)


def toeplitz_distance(M_in):
    return float(np.linalg.norm(M_in - project_toeplitz(M_in)))


def psd_distance(M_in):
    w = np.linalg.eigvalsh(0.5 * (M_in + M_in.conj().T))
    return float(np.sqrt(np.sum(np.clip(w, None, 0.0) ** 2)))


def halpern_project(M_in, iters):
    """Halpern iteration anchored at ``M_in`` for T(X) = P_T(P_S+(X)).

    ``X_{k+1} = X_0 / (k + 2) + (1 - 1 / (k + 2)) T(X_k)``; converges to the
    projection of ``M_in`` onto the Toeplitz PSD matrices.
    """
    X0 = np.asarray(M_in)
    X = X0.copy()
    for k in range(int(iters)):
        t = 1.0 / (k + 2)
        X = t * X0 + (1.0 - t) * project_toeplitz(project_psd(X))
    return X


def estimate_covariance(samples, s2, halpern_iters=1000):
    """Debiased sample covariance projected onto Toeplitz PSD matrices."""
    if halpern_iters < 1:
        raise ValueError("halpern_iters must be positive")
    h = np.asarray(samples)
    M, T = h.shape
    S = (h @ h.conj().T) / T - s2 * np.eye(M)
    S = 0.5 * (S + S.conj().T)
    R_hat = halpern_project(S, halpern_iters)
    return CovarianceEstimate(R_hat, T, float(s2), int(halpern_iters),
                              toeplitz_distance(R_hat), psd_distance(R_hat))


def _first_column_real(col):
    return np.concatenate([col.real, col[1:].imag])


def observation_matrix(cfg):
    """Real system matrix: first-column extraction of each a(theta_n) a(theta_n)^H."""
    S = steering_matrix(cfg.grid, cfg)
    cols = S * S[0:1, :].conj()  # entry m: a_m(theta) conj(a_0(theta))
    return np.vstack([cols.real, cols[1:].imag])


def extract_observation(R_hat, cfg):
    """Stack the real and (off-diagonal) imaginary parts of the first column.

    Gives ``2M - 1`` real equations; ``A`` is built by the same rule.
    """
    R_hat = np.asarray(R_hat)
    col = project_toeplitz(0.5 * (R_hat + R_hat.conj().T))[:, 0]
    return ObservationSystem(observation_matrix(cfg), _first_column_real(col))


def dataset_stats(samples, delta=None, delta_ratio=0.01):
    """Mean, unbiased covariance ``C`` and ``P = (C + delta I)^-1``.

    ``delta`` defaults to ``delta_ratio * ||C||_2``, floored at
    ``1e-12 * max(1, ||C||_2)`` for degenerate datasets.
    """
    X = np.asarray(samples, dtype=float)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("need at least two samples (rows)")
    L, N = X.shape
    x_bar = X.mean(axis=0)
    Z = X - x_bar
    C = (Z.T @ Z) / (L - 1)
    normC = float(np.linalg.norm(C, 2))
    if delta is None:
        delta = delta_ratio * normC
    delta = max(float(delta), 1e-12 * max(1.0, normC))
    P = linalg.solve(C + delta * np.eye(N), np.eye(N), assume_a="pos")
    P = 0.5 * (P + P.T)
    return DatasetStats(x_bar, C, P, L, delta)


def matrix_to_json(M_in):
    """Complex array as nested lists of ``[re, im]`` pairs."""
    arr = np.asarray(M_in, dtype=complex)
    return np.stack([arr.real, arr.imag], axis=-1).tolist()


def matrix_from_json(data):
    arr = np.asarray(data, dtype=float)
    return arr[..., 0] + 1j * arr[..., 1]


def dump_json(path, **arrays):
    payload = {}
    for k, v in arrays.items():
        v = np.asarray(v)
        payload[k] = matrix_to_json(v) if np.iscomplexobj(v) else v.tolist()
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def write_dataset_csv(path, samples):
    X = np.atleast_2d(np.asarray(samples, dtype=float))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{n}" for n in range(X.shape[1])])
        for row in X:
            w.writerow([repr(float(v)) for v in row])


def read_dataset_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows and rows[0] and not _is_number(rows[0][0]):
        rows = rows[1:]
    return np.array([[float(v) for v in r] for r in rows if r], dtype=float)


def _is_number(s):
    try:
        float(s)
    except ValueError:
        return False
    return True
