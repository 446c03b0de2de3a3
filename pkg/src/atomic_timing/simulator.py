"""Seeded, deterministic execution of ensemble scenarios.

Within a fast step the order is fixed: measure, fuse, compute controls,
supervisory broadcast (at slow ticks), estimator updates, then state advance.
All controls of step k are computed from step-k estimates before any state
moves.
"""
from __future__ import annotations

import logging
import zlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from atomic_timing.avar import optimal_weight
from atomic_timing.clock import noise_factor, process_noise_cov, system_matrices
from atomic_timing.config import ScenarioConfig
from atomic_timing.control import (
    GainCertificate,
    GainKind,
    GainSpec,
    sync_gain_bound,
    sync_gain_check,
    supervisor_gain_check,
)
from atomic_timing.estimation import (
    build_anchor_estimator,
    build_edge_estimator,
    build_tree_estimator,
)
from atomic_timing.topology import (
    degree_selector,
    generalized_inverse,
    laplacian,
    spanning_tree,
    weighting_from_D,
)

log = logging.getLogger(__name__)

CHUNK = 4096
MODE_CODES = {"free": 0, "sync": 1, "normal": 2, "emergency": 3}


class GainCertificateError(ValueError):
    def __init__(self, certificates: Sequence[GainCertificate]):
        self.certificates = list(certificates)
        bad = [c.kind.value for c in certificates if not c.valid]
        super().__init__(f"gain certificate failed for {', '.join(bad)}")


def stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator for a named noise source, stable across topology changes."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(zlib.crc32(label.encode()),))
    return np.random.Generator(np.random.PCG64(ss))


class ClockNoise:
    """Chunked per-clock process-noise source; chunking does not change the stream."""

    def __init__(self, cfg: ScenarioConfig, seed: int):
        self.factors = [noise_factor(process_noise_cov(c, cfg.tau)) for c in cfg.clocks]
        self.gens = [stream(seed, f"clock/{i + 1}") for i in range(cfg.n)]

    def draw(self, size: int) -> np.ndarray:
        """Noise block of shape (size, 2, N): [:, 0] phase, [:, 1] frequency."""
        out = np.empty((size, 2, len(self.gens)))
        for i, (g, L) in enumerate(zip(self.gens, self.factors)):
            out[:, :, i] = g.standard_normal((size, 2)) @ L.T
        return out


def resolve_D(cfg: ScenarioConfig) -> np.ndarray:
    if cfg.D == "identity":
        return np.ones(cfg.n)
    return cfg.tau * np.asarray(cfg.sigma1) + cfg.tau**3 / 3.0 * np.asarray(cfg.sigma2)


def sync_gain_spec(cfg: ScenarioConfig, L: np.ndarray, d: np.ndarray) -> GainSpec:
    alpha = float(cfg.sync_gain.get("alpha", 1.0))
    if "gamma" in cfg.sync_gain:
        gamma = float(cfg.sync_gain["gamma"])
    else:
        bound, _ = sync_gain_bound(L, d, alpha)
        gamma = float(cfg.sync_gain["gamma_fraction"]) * bound
    return GainSpec(gamma, alpha, cfg.tau, GainKind.SYNC)


def certificates(cfg: ScenarioConfig) -> list[GainCertificate]:
    """Gain certificates for all three control laws of a scenario."""
    d = resolve_D(cfg)
    L = laplacian(cfg.topology)
    certs = [sync_gain_check(sync_gain_spec(cfg, L, d), L, d)]
    for kind, g in ((GainKind.ANCHOR, cfg.anchor_gain), (GainKind.FLOAT, cfg.float_gain)):
        spec = GainSpec(float(g.get("gamma", 0.5)), float(g.get("alpha", 1.0)), cfg.T, kind)
        certs.append(supervisor_gain_check(spec))
    return certs


def initial_states(cfg: ScenarioConfig, seed: int) -> np.ndarray:
    """Initial (2, N) state: explicit from config or uniform within the configured spreads."""
    if cfg.initial_states is not None:
        return np.array(cfg.initial_states, dtype=float).T.copy()
    g = stream(seed, "init")
    ph = g.uniform(-cfg.init_phase_spread, cfg.init_phase_spread, cfg.n)
    fr = g.uniform(-cfg.init_freq_spread, cfg.init_freq_spread, cfg.n)
    return np.vstack([ph, fr])


@dataclass
class RunRecord:
    config: ScenarioConfig
    seed: int
    h: np.ndarray  # (horizon, N) phases
    u: np.ndarray  # (horizon, N) applied inputs
    eta_bar: np.ndarray  # (horizon,) supervisory broadcast
    modes: np.ndarray  # (horizon,) mode code per step
    q: np.ndarray  # weights of the synchronization destination
    x0: np.ndarray  # (2, N)
    certificates: list[GainCertificate]
    y: np.ndarray | None = None  # (horizon, E) inter-clock measurements
    freq: np.ndarray | None = None
    gap_hat: np.ndarray | None = None  # (horizon, 2) floating-gap estimate
    zeta_hat: np.ndarray | None = None  # (horizon, 2, E)
    anchor_log: list[dict] = field(default_factory=list)

    @property
    def horizon(self) -> int:
        return self.h.shape[0]

    @property
    def gts_phase(self) -> np.ndarray:
        return self.h @ self.q

    @property
    def spread(self) -> np.ndarray:
        return self.h.max(axis=1) - self.h.min(axis=1)


def spread_metric(rec: RunRecord, k: int) -> float:
    """Largest pairwise phase difference at step k."""
    if not 0 <= k < rec.horizon:
        raise IndexError(f"step {k} outside horizon {rec.horizon}")
    row = rec.h[k]
    return float(row.max() - row.min())


def free_run_phases(cfg: ScenarioConfig, seed: int, x0: np.ndarray, horizon: int, weights=None) -> np.ndarray:
    """Phase trajectories of uncontrolled clocks driven by the run's clock noise.

    With ``weights`` the weighted ensemble mean (a single trajectory) is returned.
    """
    noise = ClockNoise(cfg, seed)
    tau = cfg.tau
    if weights is not None:
        w = np.asarray(weights, dtype=float)
        ph, fr = float(x0[0] @ w), float(x0[1] @ w)
        out = np.empty(horizon)
    else:
        ph, fr = x0[0].copy(), x0[1].copy()
        out = np.empty((horizon, cfg.n))
    k = 0
    while k < horizon:
        size = min(CHUNK, horizon - k)
        v = noise.draw(size)
        if weights is not None:
            v = v @ w
            v1, v2 = v[:, 0], v[:, 1]
        else:
            v1, v2 = v[:, 0, :], v[:, 1, :]
        # freq[j] for j in chunk, then phases via cumulative sums
        f = fr + np.concatenate([np.zeros_like(v2[:1]), np.cumsum(v2[:-1], axis=0)], axis=0)
        incr = tau * f + v1
        p = ph + np.concatenate([np.zeros_like(incr[:1]), np.cumsum(incr[:-1], axis=0)], axis=0)
        out[k : k + size] = p
        ph = p[-1] + incr[-1]
        fr = f[-1] + v2[-1]
        k += size
    return out


def reference_ensemble_mean(rec: RunRecord, q) -> np.ndarray:
    """Phase of the free-running q-weighted ensemble mean under the run's own noise."""
    qv = q.q if hasattr(q, "q") else np.asarray(q, dtype=float)
    return free_run_phases(rec.config, rec.seed, rec.x0, rec.horizon, weights=qv)


def run_scenario(
    cfg: ScenarioConfig,
    seed: int | None = None,
    *,
    record_freq: bool = False,
    record_estimates: bool = False,
    record_measurements: bool = False,
) -> RunRecord:
    cfg.validate()
    seed = cfg.seed if seed is None else int(seed)
    n, tau, ell, horizon = cfg.n, cfg.tau, cfg.ell, cfg.horizon
    M = system_matrices(tau)
    x0 = initial_states(cfg, seed)
    d = resolve_D(cfg)
    q_sync = weighting_from_D(d).q

    if cfg.mode == "free":
        h = free_run_phases(cfg, seed, x0, horizon)
        return RunRecord(
            config=cfg,
            seed=seed,
            h=h,
            u=np.zeros((horizon, n)),
            eta_bar=np.zeros(horizon),
            modes=np.zeros(horizon, dtype=np.int8),
            q=q_sync,
            x0=x0,
            certificates=[],
        )
    return _Simulation(cfg, seed, M, x0, d, q_sync, record_freq, record_estimates, record_measurements).run()


class _Simulation:
    def __init__(self, cfg, seed, M, x0, d, q_sync, record_freq, record_estimates, record_measurements):
        self.cfg, self.seed, self.M = cfg, seed, M
        self.x0, self.d, self.q_sync = x0, d, q_sync
        self.record_freq = record_freq
        self.record_estimates = record_estimates
        self.record_measurements = record_measurements
        top = cfg.topology
        self.top = top
        L = laplacian(top)
        if cfg.n > 1:
            top.require_connected()

        self.certs = certificates(cfg)
        needed = {GainKind.SYNC}
        supervised = cfg.mode in ("normal", "emergency")
        if supervised:
            needed |= {GainKind.ANCHOR, GainKind.FLOAT}
        failing = [c for c in self.certs if c.kind in needed and not c.valid]
        if failing:
            raise GainCertificateError(self.certs)
        sync = sync_gain_spec(cfg, L, d)
        self.F_s = sync.F
        self.F_a = GainSpec(cfg.anchor_gain.get("gamma", 0.5), cfg.anchor_gain.get("alpha", 1.0), cfg.T, GainKind.ANCHOR).F
        self.F_f = GainSpec(cfg.float_gain.get("gamma", 0.5), cfg.float_gain.get("alpha", 1.0), cfg.T, GainKind.FLOAT).F

        # directed measurement channels and the per-clock estimator gains, stacked
        dirs = top.directed_edges
        self.E = len(dirs)
        self.src = np.array([i - 1 for i, _ in dirs], dtype=np.intp)
        self.dst = np.array([j - 1 for _, j in dirs], dtype=np.intp)
        index = {e: k for k, e in enumerate(dirs)}
        self.rev = np.array([index[(j, i)] for i, j in dirs], dtype=np.intp)
        self.S_T = degree_selector(top).T
        Hp = np.zeros((self.E, self.E))
        Hf = np.zeros((self.E, self.E))
        self.edge_estimators = []
        for i in range(1, cfg.n + 1):
            if not top.neighbors(i):
                continue
            est = build_edge_estimator(top, i, cfg.clocks, M, cfg.R)
            self.edge_estimators.append(est)
            rows = [index[(i, j)] for j in top.neighbors(i)]
            J = len(rows)
            Hp[np.ix_(rows, rows)] = est.gain.H[:J]
            Hf[np.ix_(rows, rows)] = est.gain.H[J:]
        self.Hp, self.Hf = Hp, Hf

        # supervisor machinery
        self.supervised = supervised
        if supervised:
            self._init_supervisor(index)

    def _init_supervisor(self, index):
        cfg, M = self.cfg, self.M
        st = spanning_tree(self.top, cfg.tree_root)
        self.tree = st
        self.tree_idx = np.array([index[e] for e in st.directed_edges], dtype=np.intp)
        self.tree_src = np.array([i - 1 for i, _ in st.directed_edges], dtype=np.intp)
        self.tree_dst = np.array([j - 1 for _, j in st.directed_edges], dtype=np.intp)
        try:
            q_T = optimal_weight(cfg.sigma1, cfg.sigma2, cfg.T).q
        except ValueError:
            # noiseless test clocks have no long-term optimum; float to the sync weights
            log.warning("Gamma(T) is singular; floating target uses the synchronization weights")
            q_T = self.q_sync
        self.q_T = q_T
        gap_row = self.q_sync @ generalized_inverse(st, q_T)
        self.tree_est = build_tree_estimator(st, cfg.clocks, M, cfg.R, gap_row)
        nt = cfg.n - 1
        self.tHp = self.tree_est.H_f[:nt]
        self.tHf = self.tree_est.H_f[nt:]

        self.anchor_edges = [(l + 1, i) for l, a in enumerate(cfg.anchors) for i in a.attached]
        self.anchor_est = [
            build_anchor_estimator(l, i, cfg.anchors[l - 1].noise, cfg.clocks[i - 1], M, cfg.ell, cfg.R)
            for l, i in self.anchor_edges
        ]
        self.a_mac = np.array([i - 1 for _, i in self.anchor_edges], dtype=np.intp)
        self.a_anchor = np.array([l - 1 for l, _ in self.anchor_edges], dtype=np.intp)
        self.a_H = np.array([e.gain.H[:, 0] for e in self.anchor_est]).T  # (2, nA)
        self.A_ell = np.linalg.matrix_power(M.A, cfg.ell)
        self.anchor_gens = [stream(self.seed, f"anchor/{l + 1}") for l in range(len(cfg.anchors))]
        self.anchor_meas_gens = [stream(self.seed, f"anchor_meas/{l}-{i}") for l, i in self.anchor_edges]
        self.anchor_factors = [noise_factor(process_noise_cov(a.noise, cfg.T)) for a in cfg.anchors]

    def run(self) -> RunRecord:
        cfg, M = self.cfg, self.M
        n, tau, ell, horizon = cfg.n, cfg.tau, cfg.ell, cfg.horizon
        E, src, dst, rev = self.E, self.src, self.dst, self.rev
        Hp, Hf, S_T, d = self.Hp, self.Hf, self.S_T, self.d
        Fs0, Fs1 = float(self.F_s[0]), float(self.F_s[1])
        sqrtR = np.sqrt(cfg.R)
        common = cfg.common_input

        x_ph = self.x0[0].copy()
        x_fr = self.x0[1].copy()
        zh = np.zeros((2, E))

        h_rec = np.empty((horizon, n))
        u_rec = np.empty((horizon, n))
        eta_rec = np.zeros(horizon)
        modes = np.empty(horizon, dtype=np.int8)
        freq_rec = np.empty((horizon, n)) if self.record_freq else None
        zeta_rec = np.empty((horizon, 2, E)) if self.record_estimates else None
        y_rec = np.empty((horizon, E)) if self.record_measurements else None
        gap_rec = np.zeros((horizon, 2)) if self.supervised else None
        anchor_log: list[dict] = []

        clock_noise = ClockNoise(cfg, self.seed)
        meas_gens = [stream(self.seed, f"meas/{i}-{j}") for i, j in self.top.directed_edges]

        supervised = self.supervised
        if supervised:
            nA = len(self.anchor_edges)
            Zh = np.zeros((2, nA))
            acc = np.zeros((2, nA))
            pending = np.full(nA, np.nan)
            live = np.ones(len(cfg.anchors), dtype=bool)
            gnss_ok = cfg.mode == "normal"
            mode = "normal" if gnss_ok else "emergency"
            tzh = np.zeros((2, n - 1))
            gap = np.zeros(2)
            tree_idx, t_src, t_dst = self.tree_idx, self.tree_src, self.tree_dst
            tHp, tHf, Hfbar = self.tHp, self.tHf, self.tree_est.H_fbar
            A_ell, a_H, a_mac, a_anchor = self.A_ell, self.a_H, self.a_mac, self.a_anchor
            Fa, Ff = self.F_a, self.F_f
            events: dict[int, list] = {}
            for e in cfg.events:
                events.setdefault(e.step, []).append(e)
        else:
            mode = cfg.mode
        code = MODE_CODES[mode]

        k0 = 0
        while k0 < horizon:
            size = min(CHUNK, horizon - k0)
            v = clock_noise.draw(size)
            w = np.empty((size, E))
            for c, g in enumerate(meas_gens):
                w[:, c] = g.standard_normal(size)
            w *= sqrtR
            for kk in range(size):
                k = k0 + kk
                eta = 0.0
                tick = supervised and k % ell == 0
                if supervised:
                    for e in events.get(k, ()):
                        if e.kind == "gnss_fail":
                            gnss_ok = False
                        elif e.kind == "gnss_restore":
                            gnss_ok = True
                        elif e.kind == "anchor_down":
                            live[e.anchor - 1] = False
                        elif e.kind == "anchor_up":
                            live[e.anchor - 1] = True
                            sel = a_anchor == e.anchor - 1
                            Zh[:, sel] = 0.0
                            acc[:, sel] = 0.0
                            pending[sel] = np.nan
                    if tick:
                        want = "normal" if (gnss_ok and live.any()) else "emergency"
                        if want != mode:
                            log.info("step %d: switching %s -> %s", k, mode, want)
                            if want == "emergency":
                                gap[:] = 0.0
                            else:
                                Zh[:] = 0.0
                                acc[:] = 0.0
                                pending[:] = np.nan
                            mode = want
                        code = MODE_CODES[mode]

                # measure
                y = x_ph[dst] - x_ph[src] + w[kk]
                # fuse one-sided edge estimates and compute synchronization inputs
                fused = 0.5 * (zh - zh[:, rev])
                agg = fused @ S_T
                u = d * (Fs0 * agg[0] + Fs1 * agg[1])

                if tick:
                    if mode == "normal":
                        edge_live = live[a_anchor]
                        upd = edge_live & ~np.isnan(pending)
                        if upd.any():
                            innov = pending[upd] - Zh[0, upd]
                            Zh[:, upd] = A_ell @ Zh[:, upd] + acc[:, upd] + a_H[:, upd] * innov
                        acc[:] = 0.0
                        pending[:] = np.nan
                        X = {}
                        for l in np.flatnonzero(live):
                            xi = self.anchor_factors[l] @ self.anchor_gens[l].standard_normal(2)
                            X[l] = (cfg.anchors[l].theta_star + xi[0], xi[1])
                            anchor_log.append({"step": k, "anchor": int(l) + 1, "phase": X[l][0], "freq": X[l][1]})
                        for c in np.flatnonzero(edge_live):
                            omega = sqrtR * self.anchor_meas_gens[c].standard_normal()
                            Y = X[a_anchor[c]][0] - x_ph[a_mac[c]] + omega
                            pending[c] = -Y  # estimator state is x_i - X_l
                        eta = float(-(Fa @ Zh[:, edge_live].mean(axis=1)))
                    elif mode == "emergency":
                        eta = float(-(Ff @ gap))
                u = u + (eta + common)

                if zeta_rec is not None:
                    zeta_rec[k] = zh

                # estimator updates
                Vu = u[dst] - u[src]
                innov = y - zh[0]
                zh = np.vstack(
                    (zh[0] + tau * zh[1] + tau * Vu + Hp @ innov, zh[1] + Vu + Hf @ innov)
                )
                if supervised:
                    gap_rec[k] = gap
                    dy = y[tree_idx] - tzh[0]
                    tVu = u[t_dst] - u[t_src]
                    tzh = np.vstack(
                        (tzh[0] + tau * tzh[1] + tau * tVu + tHp @ dy, tzh[1] + tVu + tHf @ dy)
                    )
                    gap = np.array([gap[0] + tau * gap[1] + tau * eta, gap[1] + eta]) + Hfbar @ dy
                    if mode == "normal":
                        ua = u[a_mac]
                        acc = np.vstack((acc[0] + tau * acc[1] + tau * ua, acc[1] + ua))

                h_rec[k] = x_ph
                u_rec[k] = u
                eta_rec[k] = eta
                modes[k] = code
                if freq_rec is not None:
                    freq_rec[k] = x_fr
                if y_rec is not None:
                    y_rec[k] = y

                # advance
                vk = v[kk]
                x_ph = x_ph + tau * x_fr + tau * u + vk[0]
                x_fr = x_fr + u + vk[1]
            k0 += size

        return RunRecord(
            config=cfg,
            seed=self.seed,
            h=h_rec,
            u=u_rec,
            eta_bar=eta_rec,
            modes=modes,
            q=self.q_sync,
            x0=self.x0,
            certificates=self.certs,
            y=y_rec,
            freq=freq_rec,
            gap_hat=gap_rec,
            zeta_hat=zeta_rec,
            anchor_log=anchor_log,
        )
