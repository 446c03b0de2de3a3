"""Scenario configuration: JSON schema, defaults and validation."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

from atomic_timing.clock import AnchorParams, ClockNoiseParams
from atomic_timing.topology import Topology

MODES = ("normal", "emergency", "sync", "free")
EVENT_KINDS = ("gnss_fail", "gnss_restore", "anchor_down", "anchor_up")
D_CHOICES = ("gamma_tau", "identity")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    anchor: int | None = None


@dataclass(frozen=True)
class ScenarioConfig:
    clocks: tuple[ClockNoiseParams, ...]
    edges: tuple[tuple[int, int], ...]
    anchors: tuple[AnchorParams, ...] = ()
    tau: float = 1.0
    T: float = 2000.0
    R: float = 1e-24
    sync_gain: dict = field(default_factory=lambda: {"gamma_fraction": 0.1, "alpha": 1.0})
    anchor_gain: dict = field(default_factory=lambda: {"gamma": 0.5, "alpha": 1.0})
    float_gain: dict = field(default_factory=lambda: {"gamma": 0.5, "alpha": 1.0})
    D: str = "gamma_tau"
    mode: str = "sync"
    tree_root: int = 1
    events: tuple[Event, ...] = ()
    horizon: int = 100_000
    seed: int = 0
    initial_states: tuple[tuple[float, float], ...] | None = None
    init_phase_spread: float = 1e-8
    init_freq_spread: float = 1e-11
    common_input: float = 0.0

    @property
    def n(self) -> int:
        return len(self.clocks)

    @property
    def ell(self) -> int:
        return int(round(self.T / self.tau))

    @property
    def topology(self) -> Topology:
        return Topology(self.n, self.edges)

    @property
    def sigma1(self) -> list[float]:
        return [c.sigma1_sq for c in self.clocks]

    @property
    def sigma2(self) -> list[float]:
        return [c.sigma2_sq for c in self.clocks]

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("at least one clock is required")
        if not self.tau > 0 or not self.T > 0:
            raise ConfigError("tau and T must be positive")
        ratio = self.T / self.tau
        if abs(ratio - round(ratio)) > 1e-9 * ratio or round(ratio) < 1:
            raise ConfigError(f"T/tau = {ratio} must be a positive integer")
        if not self.R > 0:
            raise ConfigError("measurement noise variance R must be positive")
        if self.horizon < 1:
            raise ConfigError("horizon must be >= 1")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.D not in D_CHOICES:
            raise ConfigError(f"D must be one of {D_CHOICES}, got {self.D!r}")
        if self.D == "gamma_tau" and any(c.sigma1_sq == 0 and c.sigma2_sq == 0 for c in self.clocks):
            raise ConfigError("D = gamma_tau is singular for a noiseless clock; use D = 'identity'")
        try:
            top = self.topology
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.n > 1 and self.mode != "free" and not top.is_connected():
            raise ConfigError("communication graph is not connected")
        if not 1 <= self.tree_root <= self.n:
            raise ConfigError(f"tree_root {self.tree_root} outside 1..{self.n}")
        for a in self.anchors:
            try:
                a.validate(self.n)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.mode == "normal" and not self.anchors:
            raise ConfigError("normal mode needs at least one anchor")
        if self.initial_states is not None and len(self.initial_states) != self.n:
            raise ConfigError("initial_states must list one (phase, freq) pair per clock")
        for e in self.events:
            if e.kind not in EVENT_KINDS:
                raise ConfigError(f"unknown event kind {e.kind!r}")
            if e.kind in ("anchor_down", "anchor_up") and not (
                e.anchor is not None and 1 <= e.anchor <= len(self.anchors)
            ):
                raise ConfigError(f"event {e} references an unknown anchor")
        if "gamma" not in self.sync_gain and "gamma_fraction" not in self.sync_gain:
            raise ConfigError("sync gain needs 'gamma' or 'gamma_fraction'")

    def to_dict(self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "clocks": [{"sigma1_sq": c.sigma1_sq, "sigma2_sq": c.sigma2_sq} for c in self.clocks],
            "edges": [list(e) for e in self.edges],
            "anchors": [
                {
                    "theta_star": a.theta_star,
                    "sigma1_sq": a.noise.sigma1_sq,
                    "sigma2_sq": a.noise.sigma2_sq,
                    "attached": list(a.attached),
                }
                for a in self.anchors
            ],
            "tau": self.tau,
            "T": self.T,
            "R": self.R,
            "gains": {
                "sync": dict(self.sync_gain),
                "anchor": dict(self.anchor_gain),
                "float": dict(self.float_gain),
            },
            "D": self.D,
            "mode": self.mode,
            "tree_root": self.tree_root,
            "events": [
                {k: v for k, v in (("step", e.step), ("kind", e.kind), ("anchor", e.anchor)) if v is not None}
                for e in self.events
            ],
            "horizon": self.horizon,
            "seed": self.seed,
            "init_phase_spread": self.init_phase_spread,
            "init_freq_spread": self.init_freq_spread,
            "common_input": self.common_input,
        }
        if self.initial_states is not None:
            d["initial_states"] = [list(s) for s in self.initial_states]
        return d

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON form, seed excluded."""
        d = self.to_dict()
        d.pop("seed")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    raw = copy.deepcopy(raw)
    try:
        clocks = tuple(ClockNoiseParams(float(c["sigma1_sq"]), float(c["sigma2_sq"])) for c in raw["clocks"])
        edges = tuple((int(e[0]), int(e[1])) for e in raw.get("edges", []))
        anchors = tuple(
            AnchorParams(
                theta_star=float(a.get("theta_star", 0.0)),
                noise=ClockNoiseParams(float(a["sigma1_sq"]), float(a["sigma2_sq"])),
                attached=tuple(int(i) for i in a["attached"]),
            )
            for a in raw.get("anchors", [])
        )
        gains = raw.get("gains", {})
        kwargs: dict[str, Any] = {}
        for key in ("tau", "T", "R", "init_phase_spread", "init_freq_spread", "common_input"):
            if key in raw:
                kwargs[key] = float(raw[key])
        for key in ("tree_root", "horizon", "seed"):
            if key in raw:
                kwargs[key] = int(raw[key])
        for key in ("D", "mode"):
            if key in raw:
                kwargs[key] = str(raw[key])
        if "sync" in gains:
            kwargs["sync_gain"] = dict(gains["sync"])
        if "anchor" in gains:
            kwargs["anchor_gain"] = dict(gains["anchor"])
        if "float" in gains:
            kwargs["float_gain"] = dict(gains["float"])
        if "events" in raw:
            kwargs["events"] = tuple(
                Event(int(e["step"]), str(e["kind"]), int(e["anchor"]) if "anchor" in e else None)
                for e in raw["events"]
            )
        if raw.get("initial_states") is not None:
            kwargs["initial_states"] = tuple((float(p), float(f)) for p, f in raw["initial_states"])
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed config: {exc!r}") from exc
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    cfg = ScenarioConfig(clocks=clocks, edges=edges, anchors=anchors, **kwargs)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    with open(path) as fh:
        raw = json.load(fh)
    return from_dict(raw)


def bundled_config(name: str = "table1.json") -> ScenarioConfig:
    text = resources.files("atomic_timing.data").joinpath(name).read_text()
    return from_dict(json.loads(text))
