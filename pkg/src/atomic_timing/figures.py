"""Plot-ready data for the synchronization, anchoring and floating figures."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from atomic_timing.avar import avar_analytic, avar_estimate, m_grid, optimal_weight, weight_limits
from atomic_timing.config import ScenarioConfig, bundled_config
from atomic_timing.records import provenance_line, write_table
from atomic_timing.simulator import reference_ensemble_mean, run_scenario

FIGURES = ("fig3", "fig4", "fig6", "fig7", "fig8")
HORIZONS = {
    "desk": {"fig3": 2_000, "fig4": 1_000_000, "fig6": 1_000_000, "fig7": 100_000, "fig8": 1_000_000},
    "full": {"fig3": 2_000, "fig4": 10_000_000, "fig6": 10_000_000, "fig7": 100_000, "fig8": 10_000_000},
}


def _phase_columns(prefix: str, h: np.ndarray) -> tuple[list[str], list[np.ndarray]]:
    return [f"{prefix}_h_{i + 1}" for i in range(h.shape[1])], [h[:, i] for i in range(h.shape[1])]


def _avar_columns(prefix: str, h: np.ndarray, tau: float, ms) -> tuple[list[str], list[np.ndarray]]:
    names, cols = [], []
    for i in range(h.shape[1]):
        names.append(f"{prefix}_{i + 1}")
        cols.append(np.array([avar_estimate(h[:, i], tau, m) for m in ms]))
    return names, cols


def _analytic_columns(cfg: ScenarioConfig, avg_times) -> tuple[list[str], list[np.ndarray]]:
    q0, qinf = weight_limits(cfg.sigma1, cfg.sigma2)
    return ["phi_q0", "phi_qinf"], [
        np.array([avar_analytic(q0, cfg.sigma1, cfg.sigma2, s) for s in avg_times]),
        np.array([avar_analytic(qinf, cfg.sigma1, cfg.sigma2, s) for s in avg_times]),
    ]


def fig3(cfg, horizon, seed, out: Path) -> list[Path]:
    c = cfg.with_(horizon=horizon)
    ds = run_scenario(c.with_(mode="sync"), seed)
    fr = run_scenario(c.with_(mode="free"), seed)
    names_s, cols_s = _phase_columns("sync", ds.h)
    names_f, cols_f = _phase_columns("free", fr.h)
    path = out / "fig3.csv"
    write_table(
        path,
        ["step"] + names_s + names_f + ["sync_spread", "free_spread"],
        [np.arange(horizon)] + cols_s + cols_f + [ds.spread, fr.spread],
        provenance_line(c.config_hash(), seed),
    )
    return [path]


def fig4(cfg, horizon, seed, out: Path, stride: int = 1000) -> list[Path]:
    c = cfg.with_(horizon=horizon, mode="normal")
    an = run_scenario(c, seed)
    fr = run_scenario(c.with_(mode="free"), seed)
    idx = np.arange(0, horizon, stride)
    names, cols = _phase_columns("anchored", an.h[idx])
    prov = provenance_line(c.config_hash(), seed)
    path = out / "fig4.csv"
    write_table(
        path,
        ["step"] + names + ["anchored_gts", "free_gts"],
        [idx] + cols + [an.gts_phase[idx], fr.h[idx] @ an.q],
        prov,
    )
    anchors = out / "fig4_anchors.csv"
    log = an.anchor_log
    write_table(
        anchors,
        ["step", "anchor", "phase", "freq"],
        [
            np.array([r["step"] for r in log]),
            np.array([r["anchor"] for r in log]),
            np.array([r["phase"] for r in log]),
            np.array([r["freq"] for r in log]),
        ],
        prov,
    )
    return [path, anchors]


def _avar_figure(cfg, horizon, seed, out: Path, name: str, with_floating: bool) -> list[Path]:
    c = cfg.with_(horizon=horizon)
    ms = m_grid(horizon - 1)
    avg = np.asarray(ms, dtype=float) * c.tau
    fr = run_scenario(c.with_(mode="free"), seed)
    ds = run_scenario(c.with_(mode="sync"), seed)
    header, cols = ["avg_time_s"], [avg]
    for prefix, rec in (("fr", fr), ("ds", ds)):
        n_, c_ = _avar_columns(prefix, rec.h, c.tau, ms)
        header += n_
        cols += c_
    if with_floating:
        fl = run_scenario(c.with_(mode="emergency"), seed)
        n_, c_ = _avar_columns("dsof", fl.h, c.tau, ms)
        header += n_
        cols += c_
    n_, c_ = _analytic_columns(c, avg)
    header += n_
    cols += c_
    path = out / f"{name}.csv"
    write_table(path, header, cols, provenance_line(c.config_hash(), seed))
    return [path]


def fig6(cfg, horizon, seed, out: Path) -> list[Path]:
    return _avar_figure(cfg, horizon, seed, out, "fig6", with_floating=False)


def fig8(cfg, horizon, seed, out: Path) -> list[Path]:
    return _avar_figure(cfg, horizon, seed, out, "fig8", with_floating=True)


def fig7(cfg, horizon, seed, out: Path) -> list[Path]:
    c = cfg.with_(horizon=horizon, mode="emergency")
    fl = run_scenario(c, seed)
    q0, qinf = weight_limits(c.sigma1, c.sigma2)
    r0 = reference_ensemble_mean(fl, q0)
    rinf = reference_ensemble_mean(fl, qinf)
    # the floating supervisor steers to the q_T mean, which only approaches q_inf as T grows
    rT = reference_ensemble_mean(fl, optimal_weight(c.sigma1, c.sigma2, c.T))
    prov = provenance_line(c.config_hash(), seed)
    paths = []
    for label, stop, stride in (("short", min(1000, horizon), 1), ("long", horizon, 10)):
        idx = np.arange(0, stop, stride)
        names, cols = _phase_columns("dsof", fl.h[idx])
        path = out / f"fig7_{label}.csv"
        write_table(path, ["step"] + names + ["phi_q0", "phi_qinf", "phi_qT"], [idx] + cols + [r0[idx], rinf[idx], rT[idx]], prov)
        paths.append(path)
    return paths


def reproduce(figure: str, scale: str, out_dir, seed: int = 0, cfg: ScenarioConfig | None = None) -> list[Path]:
    if figure not in FIGURES:
        raise ValueError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    if scale not in HORIZONS:
        raise ValueError(f"unknown scale {scale!r}")
    cfg = cfg or bundled_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    fn = {"fig3": fig3, "fig4": fig4, "fig6": fig6, "fig7": fig7, "fig8": fig8}[figure]
    return fn(cfg, HORIZONS[scale][figure], seed, out)
