"""Allan variance: overlapping estimator, analytic value for weighted ensembles, optimal weights."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from atomic_timing.clock import gamma_matrix
from atomic_timing.topology import WeightingVector


@dataclass(frozen=True)
class AvarCurve:
    avg_times: np.ndarray
    avar: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.avg_times) <= 0):
            raise ValueError("averaging times must be strictly increasing")

    @property
    def points(self) -> list[tuple[float, float]]:
        return list(zip(self.avg_times.tolist(), self.avar.tolist()))


def avar_estimate(h, tau: float, m: int) -> float:
    """Overlapping Allan variance of phase samples ``h[0..M]`` at averaging time ``m*tau``."""
    h = np.asarray(h, dtype=float)
    M = h.size - 1
    if m < 1:
        raise ValueError("m must be >= 1")
    if M < 2 * m + 1:
        raise ValueError(f"series of {h.size} samples too short for m={m}")
    d2 = h[2 * m :] - 2.0 * h[m:-m] + h[: -2 * m]
    # the last second difference (k = M - 2m) is excluded by the estimator's range
    d2 = d2[: M - 2 * m]
    return float(np.dot(d2, d2) / (2.0 * (m * tau) ** 2 * (M - 2 * m)))


def m_grid(M: int, min_terms: int = 100) -> list[int]:
    """Log grid {1, 2, 5} x 10^j of averaging factors keeping ``M - 2m >= min_terms``."""
    out = []
    j = 0
    while True:
        for c in (1, 2, 5):
            m = c * 10**j
            if M - 2 * m < min_terms:
                return out
            out.append(m)
        j += 1


def avar_curve(h, tau: float, ms=None) -> AvarCurve:
    h = np.asarray(h, dtype=float)
    if ms is None:
        ms = m_grid(h.size - 1)
    if not ms:
        raise ValueError(f"series of {h.size} samples is too short for any averaging time")
    vals = np.array([avar_estimate(h, tau, m) for m in ms])
    return AvarCurve(np.asarray(ms, dtype=float) * tau, vals)


def _as_q(q) -> np.ndarray:
    return q.q if isinstance(q, WeightingVector) else np.atleast_1d(np.asarray(q, dtype=float))


def avar_analytic(q, sigma1, sigma2, s: float) -> float:
    """Allan variance of the free-running q-weighted ensemble mean at averaging time ``s``."""
    qv = _as_q(q)
    G = gamma_matrix(np.atleast_1d(sigma1), np.atleast_1d(sigma2), s)
    return float(qv @ G @ qv / s**2)


def _normalized_inverse(d: np.ndarray) -> WeightingVector:
    if np.any(d <= 0):
        raise ValueError("weighting needs a strictly positive diagonal")
    inv = 1.0 / d
    return WeightingVector(inv / inv.sum())


def optimal_weight(sigma1, sigma2, s: float) -> WeightingVector:
    """Weights minimizing the ensemble Allan variance at averaging time ``s``."""
    G = np.diag(gamma_matrix(sigma1, sigma2, s))
    if np.any(G <= 0):
        raise ValueError(f"Gamma({s}) is singular: a clock has zero noise at this averaging time")
    return _normalized_inverse(G)


def weight_limits(sigma1, sigma2) -> tuple[WeightingVector, WeightingVector]:
    """Short- and long-averaging-time limits of the optimal weights."""
    s1 = np.asarray(sigma1, dtype=float)
    s2 = np.asarray(sigma2, dtype=float)
    if np.any(s1 <= 0) or np.any(s2 <= 0):
        raise ValueError("weight limits need strictly positive noise intensities")
    return _normalized_inverse(s1), _normalized_inverse(s2)
