"""Synchronization, anchoring and floating control laws with gain certificates."""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from atomic_timing.clock import SystemMatrices


class GainKind(str, enum.Enum):
    SYNC = "sync"
    ANCHOR = "anchor"
    FLOAT = "float"


@dataclass(frozen=True)
class GainSpec:
    gamma: float
    alpha: float
    period: float
    kind: GainKind

    @property
    def F(self) -> np.ndarray:
        """Row gain ``gamma * [alpha / period, 1]``."""
        return self.gamma * np.array([self.alpha / self.period, 1.0])


@dataclass(frozen=True)
class GainCertificate:
    kind: GainKind
    gamma: float
    alpha: float
    bound: float
    valid: bool
    lambda_max: float | None = None

    def as_dict(self) -> dict:
        d = {
            "kind": self.kind.value,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "bound": self.bound,
            "valid": self.valid,
        }
        if self.lambda_max is not None:
            d["lambda_max"] = self.lambda_max
        return d


def scaled_laplacian_lambda_max(L: np.ndarray, d_diag) -> float:
    """Largest eigenvalue of ``D^{1/2} L D^{1/2}``."""
    r = np.sqrt(np.asarray(d_diag, dtype=float))
    return float(np.linalg.eigvalsh(r[:, None] * L * r[None, :])[-1])


def sync_gain_bound(L: np.ndarray, d_diag, alpha: float) -> tuple[float, float]:
    lam = scaled_laplacian_lambda_max(L, d_diag)
    return 4.0 / ((2.0 + alpha) * lam), lam


def sync_gain_check(g: GainSpec, L: np.ndarray, d_diag) -> GainCertificate:
    eig = np.linalg.eigvalsh(L)
    if eig.size > 1 and eig[1] <= 1e-9 * max(eig[-1], 1.0):
        raise ValueError("graph is disconnected: Laplacian has a repeated zero eigenvalue")
    if g.alpha > 0:
        bound, lam = sync_gain_bound(L, d_diag, g.alpha)
    else:
        bound, lam = 0.0, scaled_laplacian_lambda_max(L, d_diag)
    valid = bool(g.alpha > 0 and 0 < g.gamma < bound)
    return GainCertificate(GainKind.SYNC, g.gamma, g.alpha, bound, valid, lam)


def supervisor_gain_check(g: GainSpec) -> GainCertificate:
    """Shared stability region of the anchoring and floating gains."""
    bound = 4.0 / (2.0 + g.alpha) if g.alpha > 0 else 0.0
    valid = bool(g.alpha > 0 and 0 < g.gamma < bound)
    return GainCertificate(g.kind, g.gamma, g.alpha, bound, valid)


def sync_control(fused, F_s, D_i: float) -> float:
    """``u_i = D_i F_s sum_j zeta_ij^+``; ``fused`` holds one (phase, freq) row per neighbor."""
    fused = np.atleast_2d(np.asarray(fused, dtype=float))
    if fused.size == 0:
        return 0.0
    return float(D_i * (np.asarray(F_s, dtype=float) @ fused.sum(axis=0)))


def closed_loop_matrix(F_s, L: np.ndarray, d_diag, M: SystemMatrices) -> np.ndarray:
    """``A (x) I_N - B F_s (x) D L`` acting on the [phases; frequencies] stacking."""
    n = L.shape[0]
    DL = np.asarray(d_diag, dtype=float)[:, None] * L
    BF = M.B @ np.atleast_2d(np.asarray(F_s, dtype=float))
    return np.kron(M.A, np.eye(n)) - np.kron(BF, DL)


def closed_loop_spectrum(F_s, L: np.ndarray, d_diag, M: SystemMatrices) -> np.ndarray:
    """Eigenvalues of the synchronization closed loop, mode by mode.

    ``D L`` is similar to the symmetric ``D^{1/2} L D^{1/2}``, whose null vector
    ``D^{-1/2} 1`` is known exactly. The consensus mode contributes ``eig(A)``
    and each remaining eigenvalue ``mu`` contributes ``eig(A - mu B F_s)``. This
    avoids the sqrt(eps) error a dense solver makes on the defective pair at 1.
    """
    d = np.asarray(d_diag, dtype=float)
    n = L.shape[0]
    r = np.sqrt(d)
    Ls = r[:, None] * L * r[None, :]
    null = 1.0 / r
    basis = scipy.linalg.null_space(null[None, :])  # orthonormal complement, n x (n-1)
    mus = np.linalg.eigvalsh(basis.T @ Ls @ basis) if n > 1 else np.array([])
    BF = M.B @ np.atleast_2d(np.asarray(F_s, dtype=float))
    ev = [np.linalg.eigvals(M.A)]
    ev += [np.linalg.eigvals(M.A - mu * BF) for mu in mus]
    return np.concatenate(ev)


def anchoring_control(Z_hats, F_a) -> float:
    """Common broadcast ``-F_a`` times the average anchor-edge estimate."""
    Z = np.atleast_2d(np.asarray(Z_hats, dtype=float))
    if Z.size == 0:
        raise ValueError("no live anchor estimates")
    return float(-np.asarray(F_a, dtype=float) @ Z.mean(axis=0))


def floating_control(zbar_minus_hat, F_f) -> float:
    return float(-np.asarray(F_f, dtype=float) @ np.asarray(zbar_minus_hat, dtype=float))


def anchoring_target(theta_stars, attached_counts) -> float:
    """Weighted anchor offset ``sum |W_l| Theta_l / |W|`` the GTS settles to."""
    th = np.asarray(theta_stars, dtype=float)
    w = np.asarray(attached_counts, dtype=float)
    return float(th @ w / w.sum())
