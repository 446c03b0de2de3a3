"""Two-state clock and anchor models.

A clock is a (phase, fractional frequency) pair driven by white frequency
noise and random-walk frequency noise.  Phases are in seconds, frequencies
are dimensionless.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

PSD_TOL = -1e-18


@dataclass(frozen=True)
class ClockNoiseParams:
    sigma1_sq: float  # white frequency noise intensity
    sigma2_sq: float  # random-walk frequency noise intensity

    def __post_init__(self):
        if not (np.isfinite(self.sigma1_sq) and np.isfinite(self.sigma2_sq)):
            raise ValueError("noise intensities must be finite")
        if self.sigma1_sq < 0 or self.sigma2_sq < 0:
            raise ValueError(
                f"noise intensities must be non-negative, got {self.sigma1_sq}, {self.sigma2_sq}"
            )


@dataclass(frozen=True)
class ClockState:
    phase: float
    freq: float

    def __post_init__(self):
        if not (np.isfinite(self.phase) and np.isfinite(self.freq)):
            raise ValueError("clock state must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.phase, self.freq])


@dataclass(frozen=True)
class SystemMatrices:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    tau: float


@dataclass(frozen=True)
class AnchorParams:
    theta_star: float
    noise: ClockNoiseParams
    attached: tuple[int, ...] = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.attached) == 0:
            raise ValueError("anchor must be attached to at least one clock")

    def validate(self, n: int) -> None:
        bad = [i for i in self.attached if not 1 <= i <= n]
        if bad:
            raise ValueError(f"anchor attached to unknown clocks {bad} (ensemble has {n})")


def system_matrices(tau: float) -> SystemMatrices:
    """Exact discretization of the phase/frequency integrator chain with step ``tau``."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    A = np.array([[1.0, tau], [0.0, 1.0]])
    B = np.array([[tau], [1.0]])
    C = np.array([[1.0, 0.0]])
    return SystemMatrices(A=A, B=B, C=C, tau=float(tau))


def process_noise_cov(p: ClockNoiseParams, tau: float) -> np.ndarray:
    """Covariance of the per-step process noise of one clock over ``tau`` seconds."""
    if not tau > 0:
        raise ValueError(f"tau must be positive, got {tau}")
    s1, s2 = p.sigma1_sq, p.sigma2_sq
    if s1 < 0 or s2 < 0:
        raise ValueError("noise intensities must be non-negative")
    return np.array(
        [
            [tau * s1 + tau**3 * s2 / 3.0, tau**2 * s2 / 2.0],
            [tau**2 * s2 / 2.0, tau * s2],
        ]
    )


def ensemble_noise_cov(clocks: Sequence[ClockNoiseParams], tau: float) -> np.ndarray:
    """Block covariance of the stacked noise, ordered [all phases; all frequencies]."""
    s1 = np.array([c.sigma1_sq for c in clocks])
    s2 = np.array([c.sigma2_sq for c in clocks])
    return np.block(
        [
            [np.diag(tau * s1 + tau**3 * s2 / 3.0), np.diag(tau**2 * s2 / 2.0)],
            [np.diag(tau**2 * s2 / 2.0), np.diag(tau * s2)],
        ]
    )


def gamma_matrix(sigma1_list, sigma2_list, s: float) -> np.ndarray:
    """Diagonal ``s*Sigma1 + s**3/3*Sigma2``: the phase-variance growth over ``s`` seconds."""
    s1 = np.asarray(sigma1_list, dtype=float)
    s2 = np.asarray(sigma2_list, dtype=float)
    if s1.shape != s2.shape:
        raise ValueError(f"length mismatch: {s1.shape} vs {s2.shape}")
    if not s > 0:
        raise ValueError(f"averaging time must be positive, got {s}")
    return np.diag(s * s1 + s**3 / 3.0 * s2)


def step_clock(state: ClockState, u: float, noise, M: SystemMatrices) -> ClockState:
    x = M.A @ state.as_array() + M.B[:, 0] * u + np.asarray(noise, dtype=float)
    return ClockState(float(x[0]), float(x[1]))


def noise_factor(Q: np.ndarray) -> np.ndarray:
    """Symmetric square-root ``L`` with ``L @ L.T == Q`` that tolerates semidefinite ``Q``."""
    Q = np.asarray(Q, dtype=float)
    if not np.allclose(Q, Q.T, rtol=1e-12, atol=0.0):
        raise ValueError("covariance must be symmetric")
    if not np.any(Q):
        return np.zeros_like(Q)
    w, V = np.linalg.eigh(0.5 * (Q + Q.T))
    if w.min() < PSD_TOL:
        raise ValueError(f"covariance is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def sample_process_noise(Q: np.ndarray, rng: np.random.Generator, size: int | None = None) -> np.ndarray:
    L = noise_factor(Q)
    n = Q.shape[0]
    if size is None:
        return L @ rng.standard_normal(n)
    return rng.standard_normal((size, n)) @ L.T


def sample_anchor_state(a: AnchorParams, T: float, rng: np.random.Generator) -> ClockState:
    """Draw an anchor state: mean ``(theta_star, 0)`` with the anchor's noise covariance over ``T``."""
    xi = sample_process_noise(process_noise_cov(a.noise, T), rng)
    return ClockState(a.theta_star + float(xi[0]), float(xi[1]))
