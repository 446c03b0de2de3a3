"""CSV and JSON serialization of run records and curves."""
from __future__ import annotations

import io
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from atomic_timing.simulator import RunRecord

FLOAT_FMT = "%.16e"


def provenance_line(config_hash: str, seed: int) -> str:
    return f"# config_sha256={config_hash} seed={seed}\n"


def write_table(path: str | Path, header: Sequence[str], columns: Sequence[np.ndarray], provenance: str) -> None:
    """Write equal-length columns as CSV with full-precision floats."""
    data = np.column_stack([np.asarray(c, dtype=float) for c in columns])
    buf = io.StringIO()
    buf.write(provenance)
    buf.write(",".join(header) + "\n")
    np.savetxt(buf, data, fmt=FLOAT_FMT, delimiter=",")
    Path(path).write_text(buf.getvalue())


def write_run(rec: RunRecord, out_dir: str | Path) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "run.csv"
    n = rec.h.shape[1]
    header = ["step"] + [f"h_{i}" for i in range(1, n + 1)] + ["gts_phase", "spread"]
    with open(csv_path, "w") as fh:
        fh.write(provenance_line(rec.config.config_hash(), rec.seed))
        fh.write(",".join(header) + "\n")
        data = np.column_stack([rec.h, rec.gts_phase, rec.spread])
        fmt = ["%d"] + [FLOAT_FMT] * data.shape[1]
        np.savetxt(fh, np.column_stack([np.arange(rec.horizon), data]), fmt=fmt, delimiter=",")
    meta_path = out / "meta.json"
    meta = {
        "config_sha256": rec.config.config_hash(),
        "seed": rec.seed,
        "horizon": rec.horizon,
        "weights": rec.q.tolist(),
        "certificates": [c.as_dict() for c in rec.certificates],
        "config": rec.config.to_dict(),
    }
    meta_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return csv_path, meta_path


def read_column(path: str | Path, column: str) -> np.ndarray:
    """Load one named column from a CSV written by this package (``#`` lines skipped)."""
    with open(path) as fh:
        header_line = ""
        for ln in fh:
            if not ln.startswith("#"):
                header_line = ln
                break
        header = header_line.strip().split(",")
        if column not in header:
            raise KeyError(f"column {column!r} not found in {path} (have {', '.join(header)})")
        return np.atleast_1d(np.loadtxt(fh, delimiter=",", usecols=header.index(column), ndmin=1))
