"""Steady-state Kalman predictors for edge, anchor and spanning-tree states."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from atomic_timing.clock import (
    ClockNoiseParams,
    SystemMatrices,
    ensemble_noise_cov,
    process_noise_cov,
)
from atomic_timing.topology import SpanningTree, Topology, node_incidence

log = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-12
MAX_ITER = 1_000_000


class RiccatiError(RuntimeError):
    pass


@dataclass(frozen=True)
class SteadyStateGain:
    P: np.ndarray
    H: np.ndarray
    residual: float
    spectral_radius: float


def _riccati_map(A, C, Q, R, P):
    S = C @ P @ C.T + R
    APC = A @ P @ C.T
    return A @ P @ A.T - APC @ np.linalg.solve(S, APC.T) + Q


def _rel_residual(A, C, Q, R, P) -> float:
    nP = np.linalg.norm(P)
    diff = np.linalg.norm(P - _riccati_map(A, C, Q, R, P))
    if nP == 0:
        return float(diff)
    return float(diff / nP)


def _doubling(A, C, Q, R, max_iter=200):
    # structured doubling for the filtering form; converges quadratically
    n = A.shape[0]
    Ak = A.T.copy()
    Gk = C.T @ np.linalg.solve(R, C)
    Hk = Q.copy()
    eye = np.eye(n)
    for _ in range(max_iter):
        W = eye + Gk @ Hk
        WA = np.linalg.solve(W, Ak)
        WG = np.linalg.solve(W, Gk)
        H_next = Hk + Ak.T @ Hk @ WA
        Gk = Gk + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        Gk = 0.5 * (Gk + Gk.T)
        H_next = 0.5 * (H_next + H_next.T)
        if np.linalg.norm(H_next - Hk) <= 1e-15 * max(np.linalg.norm(H_next), 1e-300):
            return H_next
        Hk = H_next
    return Hk


def solve_dare(A, C, Q, R) -> SteadyStateGain:
    """Steady-state prediction covariance ``P`` and gain ``H = A P C^T (C P C^T + R)^{-1}``.

    The problem is scaled to unit magnitude, solved by doubling, then polished
    by fixed-point iteration of the Riccati map until the relative residual is
    below 1e-12.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    C = np.atleast_2d(np.asarray(C, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    if np.any(np.linalg.eigvalsh(R) <= 0):
        raise RiccatiError("measurement covariance R must be positive definite")
    scale = max(np.linalg.norm(Q), np.linalg.norm(R))
    Qs, Rs = Q / scale, R / scale

    P = _doubling(A, C, Qs, Rs)
    if not np.all(np.isfinite(P)):
        P = Qs.copy()
    res = _rel_residual(A, C, Qs, Rs, P)
    it = 0
    while res >= 1e-14 and it < MAX_ITER:
        P = _riccati_map(A, C, Qs, Rs, P)
        P = 0.5 * (P + P.T)
        it += 1
        if it % 64 == 0 or it < 8:
            res = _rel_residual(A, C, Qs, Rs, P)
            if res < RESIDUAL_TOL and it >= 8:
                break
    res = _rel_residual(A, C, Qs, Rs, P)
    if not res < RESIDUAL_TOL:
        raise RiccatiError(f"Riccati iteration did not converge (residual {res:.3e})")
    Sinn = C @ P @ C.T + Rs
    if np.linalg.cond(Sinn) > 1e14:
        raise RiccatiError("innovation covariance is singular")
    H = A @ P @ C.T @ np.linalg.inv(Sinn)
    rho = float(np.max(np.abs(np.linalg.eigvals(A - H @ C))))
    return SteadyStateGain(P=P * scale, H=H, residual=res, spectral_radius=rho)


def block_matrices(M: SystemMatrices, k: int):
    """``A (x) I_k``, ``B (x) I_k``, ``C (x) I_k`` for k stacked edge states."""
    I = np.eye(k)
    return np.kron(M.A, I), np.kron(M.B, I), np.kron(M.C, I)


@dataclass(frozen=True)
class EdgeEstimator:
    owner: int
    neighbors: tuple[int, ...]
    zeta_hat: np.ndarray  # [phase differences; frequency differences]
    gain: SteadyStateGain
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray

    @property
    def size(self) -> int:
        return len(self.neighbors)


def edge_noise_cov(V: np.ndarray, clocks: Sequence[ClockNoiseParams], tau: float) -> np.ndarray:
    I2 = np.eye(2)
    T = np.kron(I2, V)
    return T @ ensemble_noise_cov(clocks, tau) @ T.T


def build_edge_estimator(
    t: Topology, i: int, clocks: Sequence[ClockNoiseParams], M: SystemMatrices, R: float
) -> EdgeEstimator:
    V = node_incidence(t, i)
    J = V.shape[0]
    A, B, C = block_matrices(M, J)
    gain = solve_dare(A, C, edge_noise_cov(V, clocks, M.tau), R * np.eye(J))
    return EdgeEstimator(
        owner=i,
        neighbors=tuple(t.neighbors(i)),
        zeta_hat=np.zeros(2 * J),
        gain=gain,
        A=A,
        B=B,
        C=C,
    )


def edge_estimator_step(est: EdgeEstimator, y_i, eta_breve_i) -> EdgeEstimator:
    y = np.asarray(y_i, dtype=float)
    eb = np.asarray(eta_breve_i, dtype=float)
    if y.shape != (est.size,) or eb.shape != (est.size,):
        raise ValueError(f"expected {est.size} measurements and inputs, got {y.shape}, {eb.shape}")
    z = est.zeta_hat
    z_next = est.A @ z + est.B @ eb + est.gain.H @ (y - est.C @ z)
    return replace(est, zeta_hat=z_next)


def fuse_edge_estimates(zij, zji) -> tuple[np.ndarray, np.ndarray]:
    """Antisymmetrize the two one-sided estimates of the same edge."""
    zij = np.asarray(zij, dtype=float)
    zji = np.asarray(zji, dtype=float)
    half = 0.5 * (zij - zji)
    return half, -half


@dataclass(frozen=True)
class AnchorEdgeEstimator:
    """Predictor for ``Z = x_i - X_l`` between clock ``mac`` and anchor ``anchor``."""

    anchor: int
    mac: int
    z_hat: np.ndarray
    accumulated_input: np.ndarray
    gain: SteadyStateGain
    M: SystemMatrices
    A_ell: np.ndarray
    ell: int
    steps: int = 0


def build_anchor_estimator(
    anchor: int,
    mac: int,
    anchor_noise: ClockNoiseParams,
    clock_noise: ClockNoiseParams,
    M: SystemMatrices,
    ell: int,
    R: float,
) -> AnchorEdgeEstimator:
    T = ell * M.tau
    A_ell = np.linalg.matrix_power(M.A, ell)
    Q = process_noise_cov(anchor_noise, T) + process_noise_cov(clock_noise, T)
    gain = solve_dare(A_ell, M.C, Q, np.array([[R]]))
    return AnchorEdgeEstimator(
        anchor=anchor,
        mac=mac,
        z_hat=np.zeros(2),
        accumulated_input=np.zeros(2),
        gain=gain,
        M=M,
        A_ell=A_ell,
        ell=ell,
    )


def accumulate_anchor_input(est: AnchorEdgeEstimator, u: float) -> AnchorEdgeEstimator:
    acc = est.M.A @ est.accumulated_input + est.M.B[:, 0] * u
    return replace(est, accumulated_input=acc, steps=est.steps + 1)


def anchor_estimator_step(est: AnchorEdgeEstimator, Y_li: float) -> AnchorEdgeEstimator:
    """Advance one supervisory period using the reading taken at its start.

    ``Y_li`` must be oriented as ``C Z + noise``.
    """
    if est.steps != est.ell:
        raise RuntimeError(
            f"anchor estimator ({est.anchor}, {est.mac}) stepped off-tick "
            f"after {est.steps} of {est.ell} fast steps"
        )
    z = est.z_hat
    innov = Y_li - est.M.C[0] @ z
    z_next = est.A_ell @ z + est.accumulated_input + est.gain.H[:, 0] * innov
    return replace(est, z_hat=z_next, accumulated_input=np.zeros(2), steps=0)


@dataclass(frozen=True)
class TreeEstimator:
    zeta_beta_hat: np.ndarray  # [phase; frequency] blocks over tree edges
    zbar_minus_hat: np.ndarray
    H_f: np.ndarray
    H_fbar: np.ndarray
    gap_row: np.ndarray  # q_tau^T V_beta_T^+
    gain: SteadyStateGain
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    M: SystemMatrices


def build_tree_estimator(
    st: SpanningTree,
    clocks: Sequence[ClockNoiseParams],
    M: SystemMatrices,
    R: float,
    gap_row: np.ndarray,
) -> TreeEstimator:
    n_tree = st.v_beta.shape[0]
    A, B, C = block_matrices(M, n_tree)
    gain = solve_dare(A, C, edge_noise_cov(st.v_beta, clocks, M.tau), R * np.eye(n_tree))
    H_fbar = np.kron(np.eye(2), gap_row[None, :]) @ gain.H
    return TreeEstimator(
        zeta_beta_hat=np.zeros(2 * n_tree),
        zbar_minus_hat=np.zeros(2),
        H_f=gain.H,
        H_fbar=H_fbar,
        gap_row=np.asarray(gap_row, dtype=float),
        gain=gain,
        A=A,
        B=B,
        C=C,
        M=M,
    )


def tree_estimator_step(est: TreeEstimator, y_beta, eta_breve_beta, eta_bar: float) -> TreeEstimator:
    y = np.asarray(y_beta, dtype=float)
    eb = np.asarray(eta_breve_beta, dtype=float)
    n_tree = est.gap_row.size
    if y.shape != (n_tree,) or eb.shape != (n_tree,):
        raise ValueError(f"expected {n_tree} tree measurements and inputs, got {y.shape}, {eb.shape}")
    dy = y - est.C @ est.zeta_beta_hat
    zb = est.A @ est.zeta_beta_hat + est.B @ eb + est.H_f @ dy
    gap = est.M.A @ est.zbar_minus_hat + est.M.B[:, 0] * eta_bar + est.H_fbar @ dy
    return replace(est, zeta_beta_hat=zb, zbar_minus_hat=gap)
