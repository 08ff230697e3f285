"""Artifact writers: CSV tables, manifest, timing.

Scientific artifacts (CSVs, manifest.json) are deterministic functions of
(config bytes, seed): same inputs, byte-identical files. Wall time is the
one inherently nondeterministic readout, so it lives in its own
timing.json, which the deterministic commands write last and the verify
command does not write at all.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from importlib import metadata

import numpy as np


def config_hash(raw_bytes):
    return hashlib.sha256(raw_bytes).hexdigest()


def write_csv(path, rows):
    """Write dict rows with a header; comma separator, dot decimal, UTF-8."""
    rows = list(rows)
    if not rows:
        raise ValueError("refusing to write an empty CSV")
    fieldnames = list(rows[0].keys())
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _cell(row[k]) for k in fieldnames})


def _cell(value):
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return "nan" if math.isnan(v) else repr(v)
    if isinstance(value, (np.integer, int)):
        return int(value)
    return value


def _jsonable(value):
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (np.floating, float)):
        v = float(value)
        return None if not math.isfinite(v) else v
    if isinstance(value, (np.integer, int)):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    return value


def write_json(path, payload):
    text = json.dumps(_jsonable(payload), sort_keys=True, indent=2)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text + "\n")


def write_manifest(cfg):
    try:
        own_version = metadata.version("rbdsde")
    except metadata.PackageNotFoundError:  # pragma: no cover - source tree use
        own_version = "unknown"
    write_json(
        cfg.out_dir / "manifest.json",
        {
            "command": cfg.command,
            "config_sha256": config_hash(cfg.config_bytes),
            "seed": cfg.seed,
            "versions": {
                "python": platform.python_version(),
                "numpy": np.__version__,
                "rbdsde": own_version,
            },
        },
    )


def write_timing(cfg, wall_seconds):
    write_json(cfg.out_dir / "timing.json", {"wall_time_s": float(wall_seconds)})
