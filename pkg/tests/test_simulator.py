import numpy as np
import pytest

from atomic_timing.avar import optimal_weight
from atomic_timing.clock import AnchorParams, ClockNoiseParams, noise_factor, process_noise_cov, system_matrices
from atomic_timing.config import ConfigError, Event, ScenarioConfig
from atomic_timing.control import GainKind, GainSpec, anchoring_control, floating_control, sync_control
from atomic_timing.estimation import (
    accumulate_anchor_input,
    anchor_estimator_step,
    build_anchor_estimator,
    build_edge_estimator,
    build_tree_estimator,
    edge_estimator_step,
    fuse_edge_estimates,
    tree_estimator_step,
)
from atomic_timing.simulator import (
    MODE_CODES,
    ClockNoise,
    GainCertificateError,
    initial_states,
    reference_ensemble_mean,
    resolve_D,
    run_scenario,
    spread_metric,
    stream,
    sync_gain_spec,
)
from atomic_timing.topology import generalized_inverse, laplacian, node_incidence, spanning_tree

QUIET = ClockNoiseParams(0.0, 0.0)


def quiet_cfg(n=3, **kw):
    base = dict(
        clocks=(QUIET,) * n,
        edges=tuple((i, i + 1) for i in range(1, n)),
        initial_states=((0.0, 0.0),) * n,
        D="identity",
        horizon=500,
    )
    base.update(kw)
    return ScenarioConfig(**base)


def reference_run(cfg: ScenarioConfig, seed: int):
    """Per-MAC simulation assembled from the operation-level functions."""
    n, tau, ell, H = cfg.n, cfg.tau, cfg.ell, cfg.horizon
    M = system_matrices(tau)
    top = cfg.topology
    x = initial_states(cfg, seed).copy()
    d = resolve_D(cfg)
    F_s = sync_gain_spec(cfg, laplacian(top), d).F
    ests = {i: build_edge_estimator(top, i, cfg.clocks, M, cfg.R) for i in range(1, n + 1)}
    V = {i: node_incidence(top, i) for i in range(1, n + 1)}
    v = ClockNoise(cfg, seed).draw(H)
    sqR = np.sqrt(cfg.R)
    meas = {e: sqR * stream(seed, f"meas/{e[0]}-{e[1]}").standard_normal(H) for e in top.directed_edges}

    mode = cfg.mode
    if mode in ("normal", "emergency"):
        st = spanning_tree(top, cfg.tree_root)
        q_tau = d ** -1 / np.sum(d ** -1)
        q_T = optimal_weight(cfg.sigma1, cfg.sigma2, cfg.T).q
        tree = build_tree_estimator(st, cfg.clocks, M, cfg.R, q_tau @ generalized_inverse(st, q_T))
        F_f = GainSpec(cfg.float_gain["gamma"], cfg.float_gain["alpha"], cfg.T, GainKind.FLOAT).F
        F_a = GainSpec(cfg.anchor_gain["gamma"], cfg.anchor_gain["alpha"], cfg.T, GainKind.ANCHOR).F
        pairs = [(l + 1, i) for l, a in enumerate(cfg.anchors) for i in a.attached]
        aest = [
            build_anchor_estimator(l, i, cfg.anchors[l - 1].noise, cfg.clocks[i - 1], M, ell, cfg.R)
            for l, i in pairs
        ]
        agens = [stream(seed, f"anchor/{l + 1}") for l in range(len(cfg.anchors))]
        mgens = [stream(seed, f"anchor_meas/{l}-{i}") for l, i in pairs]
        afac = [noise_factor(process_noise_cov(a.noise, cfg.T)) for a in cfg.anchors]
        pending = [None] * len(pairs)

    h = np.empty((H, n))
    for k in range(H):
        y = {(i, j): x[0, j - 1] - x[0, i - 1] + meas[(i, j)][k] for i, j in top.directed_edges}
        u = np.zeros(n)
        for i in range(1, n + 1):
            nb = top.neighbors(i)
            J = len(nb)
            fused = []
            for c, j in enumerate(nb):
                zi = ests[i].zeta_hat[[c, J + c]]
                cj = top.neighbors(j).index(i)
                Jj = len(top.neighbors(j))
                zj = ests[j].zeta_hat[[cj, Jj + cj]]
                fused.append(fuse_edge_estimates(zi, zj)[0])
            u[i - 1] = sync_control(fused, F_s, d[i - 1])
        eta = 0.0
        if k % ell == 0 and mode == "normal":
            for c in range(len(pairs)):
                if pending[c] is not None:
                    aest[c] = anchor_estimator_step(aest[c], pending[c])
            X = [(cfg.anchors[l].theta_star + (afac[l] @ g.standard_normal(2))[0]) for l, g in enumerate(agens)]
            for c, (l, i) in enumerate(pairs):
                pending[c] = -(X[l - 1] - x[0, i - 1] + sqR * mgens[c].standard_normal())
            eta = anchoring_control([e.z_hat for e in aest], F_a)
        elif k % ell == 0 and mode == "emergency":
            eta = floating_control(tree.zbar_minus_hat, F_f)
        u = u + eta
        for i in range(1, n + 1):
            ests[i] = edge_estimator_step(ests[i], [y[(i, j)] for j in top.neighbors(i)], V[i] @ u)
        if mode in ("normal", "emergency"):
            yb = [y[e] for e in st.directed_edges]
            tree = tree_estimator_step(tree, yb, st.v_beta @ u, eta)
            if mode == "normal":
                aest = [accumulate_anchor_input(e, u[i - 1]) for e, (_, i) in zip(aest, pairs)]
        h[k] = x[0]
        x = M.A @ x + M.B @ u[None, :] + v[k]
    return h


@pytest.mark.parametrize("mode,T", [("sync", 2000.0), ("emergency", 10.0), ("normal", 10.0)])
def test_vectorized_matches_per_mac_reference(table1, mode, T):
    cfg = table1.with_(mode=mode, T=T, horizon=300)
    rec = run_scenario(cfg, seed=9)
    ref = reference_run(cfg, 9)
    np.testing.assert_allclose(rec.h, ref, rtol=0, atol=1e-20)


def test_zero_noise_null_dynamics():
    anchor = AnchorParams(0.0, QUIET, (1,))
    for mode in ("sync", "normal", "emergency"):
        rec = run_scenario(quiet_cfg(anchors=(anchor,), mode=mode, T=10.0), seed=0)
        assert np.all(rec.h == 0)


def test_pure_integrator():
    cfg = quiet_cfg(n=2, mode="free", initial_states=((0.0, 1e-9), (0.0, 0.0)), horizon=10_000)
    rec = run_scenario(cfg, seed=0)
    k = np.arange(cfg.horizon)
    # exact up to floating-point summation of the per-step increments
    np.testing.assert_allclose(rec.h[:, 0], k * cfg.tau * 1e-9, rtol=1e-12, atol=0)
    assert np.all(rec.h[:, 1] == 0)


def test_run_is_deterministic(table1):
    cfg = table1.with_(mode="normal", T=50.0, horizon=2000)
    a, b = run_scenario(cfg, seed=3), run_scenario(cfg, seed=3)
    for name in ("h", "u", "eta_bar", "modes"):
        assert getattr(a, name).tobytes() == getattr(b, name).tobytes()
    assert a.anchor_log == b.anchor_log


def test_seed_changes_run(table1):
    cfg = table1.with_(horizon=100)
    assert not np.array_equal(run_scenario(cfg, 1).h, run_scenario(cfg, 2).h)


def test_chunk_boundary_invisible(table1):
    # a run spanning several noise chunks agrees with its own prefix
    cfg = table1.with_(mode="free")
    long = run_scenario(cfg.with_(horizon=9000), seed=1).h
    short = run_scenario(cfg.with_(horizon=4100), seed=1).h
    assert np.array_equal(long[:4100], short)


def test_spread_metric_examples(table1):
    cfg = quiet_cfg(n=2, mode="free", initial_states=((3e-9, 0.0), (-3e-9, 0.0)), horizon=5)
    rec = run_scenario(cfg, seed=0)
    assert spread_metric(rec, 0) == pytest.approx(6e-9, rel=1e-15)
    same = run_scenario(quiet_cfg(mode="free", horizon=5), seed=0)
    assert spread_metric(same, 4) == 0.0
    with pytest.raises(IndexError):
        spread_metric(same, 5)


def test_sync_tighter_than_free(table1):
    cfg = table1.with_(horizon=10_001)
    sync = run_scenario(cfg, seed=2)
    free = run_scenario(cfg.with_(mode="free"), seed=2)
    assert spread_metric(free, 10_000) > spread_metric(sync, 10_000)


def test_reference_single_clock_is_the_clock():
    cfg = ScenarioConfig(clocks=(ClockNoiseParams(3.31e-20, 3.12e-26),), edges=(), mode="free", horizon=1000)
    rec = run_scenario(cfg, seed=4)
    np.testing.assert_array_equal(reference_ensemble_mean(rec, [1.0]), rec.h[:, 0])


def test_reference_without_noise_propagates_initial_state():
    cfg = quiet_cfg(n=2, mode="free", initial_states=((1e-9, 2e-12), (3e-9, 4e-12)), horizon=100)
    rec = run_scenario(cfg, seed=0)
    r = reference_ensemble_mean(rec, [0.25, 0.75])
    k = np.arange(100)
    np.testing.assert_allclose(r, 2.5e-9 + k * 3.5e-12, rtol=1e-12)


@pytest.fixture(scope="module")
def sync_run(table1):
    cfg = table1.with_(horizon=60_000)
    return run_scenario(cfg, seed=6)


def test_sync_gts_is_free_ensemble_mean(sync_run):
    # the synchronization inputs cancel in the q-weighted mean, so the GTS is Phi(q)
    r = reference_ensemble_mean(sync_run, sync_run.q)
    assert np.abs(sync_run.gts_phase - r).max() < 1e-15


def test_sync_offsets_from_reference_stationary(sync_run):
    r = reference_ensemble_mean(sync_run, sync_run.q)
    dev = sync_run.h - r[:, None]
    a, b = dev[20_000:40_000], dev[40_000:]
    ratio = a.var(axis=0) / b.var(axis=0)
    assert np.all((ratio > 0.5) & (ratio < 2.0))


def test_common_phase_offset_equivalence(table1):
    cfg = table1.with_(horizon=3000, mode="emergency", T=100.0)
    x0 = initial_states(cfg, 8).T
    c = 5e-7
    a = run_scenario(cfg.with_(initial_states=tuple(map(tuple, x0))), 8, record_measurements=True)
    b = run_scenario(cfg.with_(initial_states=tuple((p + c, f) for p, f in x0)), 8, record_measurements=True)
    np.testing.assert_allclose(a.y, b.y, rtol=0, atol=1e-20)
    np.testing.assert_allclose(a.u, b.u, rtol=0, atol=1e-11 * np.abs(a.u).max())
    np.testing.assert_allclose(a.spread, b.spread, rtol=0, atol=1e-20)
    np.testing.assert_allclose(b.gts_phase - a.gts_phase, c, rtol=1e-9)


def test_broadcast_only_at_ticks(table1):
    cfg = table1.with_(mode="normal", T=20.0, horizon=400)
    rec = run_scenario(cfg, seed=1)
    off = np.arange(cfg.horizon) % cfg.ell != 0
    assert np.all(rec.eta_bar[off] == 0)
    assert np.any(rec.eta_bar[~off] != 0)


def test_gnss_failure_stops_anchor_reads(table1):
    cfg = table1.with_(mode="normal", T=100.0, horizon=2000, events=(Event(550, "gnss_fail"),))
    rec = run_scenario(cfg, seed=1)
    # the switch waits for the next slow tick
    assert np.all(rec.modes[:600] == MODE_CODES["normal"])
    assert np.all(rec.modes[600:] == MODE_CODES["emergency"])
    assert rec.anchor_log and max(e["step"] for e in rec.anchor_log) < 550


def test_gnss_restore_and_all_anchors_down(table1):
    events = (Event(300, "anchor_down", 1), Event(300, "anchor_down", 2), Event(700, "anchor_up", 2))
    cfg = table1.with_(mode="normal", T=100.0, horizon=1000, events=events)
    rec = run_scenario(cfg, seed=1)
    assert np.all(rec.modes[300:700] == MODE_CODES["emergency"])
    assert np.all(rec.modes[700:] == MODE_CODES["normal"])
    assert {e["anchor"] for e in rec.anchor_log if e["step"] >= 700} == {2}


def test_invalid_sync_gain_rejected(table1):
    with pytest.raises(GainCertificateError) as err:
        run_scenario(table1.with_(sync_gain={"gamma_fraction": 1.5, "alpha": 1.0}, horizon=10))
    assert any(c.lambda_max for c in err.value.certificates)


def test_invalid_supervisor_gain_rejected_only_when_used(table1):
    cfg = table1.with_(float_gain={"gamma": 2.0, "alpha": 1.0}, horizon=10)
    run_scenario(cfg)  # sync mode does not use the floating gain
    with pytest.raises(GainCertificateError):
        run_scenario(cfg.with_(mode="emergency"))


def test_noiseless_clock_needs_identity_D():
    with pytest.raises(ConfigError):
        quiet_cfg(D="gamma_tau").validate()


def test_normal_mode_needs_anchor(table1):
    with pytest.raises(ConfigError):
        run_scenario(table1.with_(mode="normal", anchors=()))
