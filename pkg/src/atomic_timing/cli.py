"""Command-line front end.

Exit codes: 0 success, 1 missing/short input, 2 invalid config or failed gain certificate.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from atomic_timing.avar import avar_curve, m_grid, optimal_weight, weight_limits
from atomic_timing.config import ConfigError, ScenarioConfig, from_dict
from atomic_timing.figures import FIGURES, reproduce
from atomic_timing.records import read_column, write_run
from atomic_timing.simulator import GainCertificateError, certificates, run_scenario

EXIT_OK, EXIT_INPUT, EXIT_CONFIG = 0, 1, 2
MIN_AVAR_SAMPLES = 203  # 200 second differences at m = 1


class InputError(Exception):
    pass


def _load(path: str) -> ScenarioConfig:
    p = Path(path)
    if p.exists():
        text = p.read_text()
    else:
        bundled = resources.files("atomic_timing.data").joinpath(p.name)
        if p.name != path or not bundled.is_file():
            raise InputError(f"config file not found: {path}")
        text = bundled.read_text()
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(raw)


def _parse_seeds(spec: str) -> list[int]:
    if ".." in spec:
        a, b = spec.split("..", 1)
        return list(range(int(a), int(b) + 1))
    return [int(s) for s in spec.split(",")]


def _simulate_one(cfg: ScenarioConfig, seed: int, out: Path) -> str:
    rec = run_scenario(cfg, seed)
    csv_path, _ = write_run(rec, out)
    return str(csv_path)


def cmd_simulate(args) -> int:
    cfg = _load(args.config)
    if args.horizon is not None:
        cfg = cfg.with_(horizon=args.horizon)
    try:
        if args.seeds:
            seeds = _parse_seeds(args.seeds)
            outs = [Path(args.out) / f"seed_{s}" for s in seeds]
            with ProcessPoolExecutor() as pool:
                for path in pool.map(_simulate_one, [cfg] * len(seeds), seeds, outs):
                    print(path)
        else:
            seed = cfg.seed if args.seed is None else args.seed
            print(_simulate_one(cfg, seed, Path(args.out)))
    except GainCertificateError as exc:
        print(json.dumps({"error": str(exc), "certificates": [c.as_dict() for c in exc.certificates]}, indent=2))
        return EXIT_CONFIG
    return EXIT_OK


def cmd_avar(args) -> int:
    try:
        h = read_column(args.input, args.column)
    except FileNotFoundError:
        raise InputError(f"input file not found: {args.input}")
    except KeyError as exc:
        raise InputError(str(exc.args[0]))
    if h.size < MIN_AVAR_SAMPLES:
        raise InputError(
            f"column {args.column!r} has {h.size} samples; at least {MIN_AVAR_SAMPLES} are needed"
        )
    curve = avar_curve(h, args.tau, m_grid(h.size - 1))
    sys.stdout.write("avg_time_s,avar\n")
    for t, a in curve.points:
        sys.stdout.write(f"{t:.16e},{a:.16e}\n")
    return EXIT_OK


def cmd_weights(args) -> int:
    cfg = _load(args.config)
    if not args.avg_time > 0:
        raise ConfigError(f"averaging time must be positive, got {args.avg_time}")
    q = optimal_weight(cfg.sigma1, cfg.sigma2, args.avg_time)
    report = {"avg_time_s": args.avg_time, "q": q.q.tolist()}
    try:
        q0, qinf = weight_limits(cfg.sigma1, cfg.sigma2)
        report["q0"], report["q_inf"] = q0.q.tolist(), qinf.q.tolist()
    except ValueError as exc:
        report["limits_error"] = str(exc)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args.config)
    certs = certificates(cfg)
    ok = all(c.valid for c in certs)
    print(json.dumps({"valid": ok, "certificates": [c.as_dict() for c in certs]}, indent=2))
    return EXIT_OK if ok else EXIT_CONFIG


def cmd_reproduce(args) -> int:
    cfg = _load(args.config) if args.config else None
    for p in reproduce(args.figure, args.scale, args.out, seed=args.seed, cfg=cfg):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="atomic-timing", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run a scenario and write run.csv + meta.json")
    p.add_argument("--config", required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--seed", type=int, default=None, help="defaults to the config seed (0 if unset)")
    g.add_argument("--seeds", help="seed sweep, e.g. 0..7 or 1,4,9; outputs go to OUT/seed_<n>")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("avar", help="Allan variance curve of one CSV column")
    p.add_argument("--input", required=True)
    p.add_argument("--column", required=True)
    p.add_argument("--tau", type=float, default=1.0)
    p.set_defaults(func=cmd_avar)

    p = sub.add_parser("weights", help="optimal ensemble weights at an averaging time")
    p.add_argument("--config", required=True)
    p.add_argument("--avg-time", type=float, required=True)
    p.set_defaults(func=cmd_weights)

    p = sub.add_parser("validate", help="gain certificates of a config")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("reproduce", help="write plot-ready data for a figure")
    p.add_argument("--figure", required=True, choices=FIGURES)
    p.add_argument("--scale", choices=("desk", "full"), default="desk")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", default=None, help="defaults to the bundled table1.json")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
