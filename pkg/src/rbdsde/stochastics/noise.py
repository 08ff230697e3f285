"""Two-sided Brownian increments from counter-based substreams.

The forward noise B drives the state equation; the backward noise W enters
the solver through backward Ito integrals. The two families must be mutually
independent, which is arranged by deriving separate Philox keys from the user
seed with a splitmix-style mixer.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError, RBDSDEError
from .grids import TimeGrid

_PURPOSE_TAGS = {
    "forward": 0x1B873593,
    "backward": 0xCC9E2D51,
    "start": 0x85EBCA6B,
    "replicate": 0xE6546B64,
}


def _mix64(z):
    # splitmix64 finalizer; full 64-bit avalanche
    z = (z + 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def substream(seed, purpose, index=0):
    """Deterministic generator keyed by (seed, purpose tag, index)."""
    if purpose not in _PURPOSE_TAGS:
        raise ConfigError(f"unknown noise purpose {purpose!r}", field="purpose")
    k0 = _mix64(int(seed) & 0xFFFFFFFFFFFFFFFF)
    k1 = _mix64(k0 ^ _PURPOSE_TAGS[purpose])
    k2 = _mix64(k1 ^ (int(index) & 0xFFFFFFFFFFFFFFFF))
    key = (k1 | (k2 << 64)) & ((1 << 128) - 1)  # Philox wants < 2**128
    return np.random.Generator(np.random.Philox(key=max(key, 1)))


@dataclass(frozen=True)
class NoiseBundle:
    """Increment arrays for a simulation run.

    Attributes
    ----------
    grid : TimeGrid
    dB : ndarray, shape (M, N, d)
        Forward Brownian increments, one row of N steps per path.
    dW : ndarray, shape (N_W, N, l)
        Backward Brownian increments, one row per backward path.
    seed : int
    """

    grid: TimeGrid
    dB: np.ndarray
    dW: np.ndarray
    seed: int

    @property
    def m_paths(self):
        return self.dB.shape[0]

    @property
    def n_w_paths(self):
        return self.dW.shape[0]

    @property
    def d(self):
        return self.dB.shape[2]

    @property
    def l(self):
        return self.dW.shape[2]


def _moment_check(arr, dt, label):
    n_samples = arr.shape[0] * arr.shape[1]
    if n_samples < 1000:
        return  # too few increments for the bound to be meaningful
    mean = np.mean(arr.reshape(-1, arr.shape[2]), axis=0)
    bound = 4.0 / np.sqrt(n_samples)
    if np.any(np.abs(mean) > bound):
        raise RBDSDEError(
            f"{label} increment mean {np.max(np.abs(mean)):.3e} exceeds "
            f"the 4/sqrt(M N) sanity bound {bound:.3e}"
        )
    var = np.var(arr.reshape(-1, arr.shape[2]), axis=0)
    if np.any(np.abs(var - dt) > 0.1 * dt):
        raise RBDSDEError(
            f"{label} increment variance outside 10% of dt "
            f"(got {var}, dt = {dt:.3e})"
        )


def sample_noise(grid, d, l, m_paths, n_w_paths, seed):
    """Independent forward and backward increment bundles for one run.

    Forward paths carry d-dimensional increments over the grid steps;
    backward paths carry l-dimensional increments. Both streams derive from
    ``seed`` through independent substream keys, so a bundle is reproducible
    bit for bit given (grid, dims, counts, seed).
    """
    if m_paths < 1 or n_w_paths < 1:
        raise ConfigError("need at least one forward and one backward path")
    if d < 1 or l < 1:
        raise ConfigError("noise dimensions must be positive")
    root = np.sqrt(grid.dt)
    gen_b = substream(seed, "forward")
    dB = root * gen_b.standard_normal((m_paths, grid.steps, d))
    gen_w = substream(seed, "backward")
    dW = root * gen_w.standard_normal((n_w_paths, grid.steps, l))
    _moment_check(dB, grid.dt, "forward")
    _moment_check(dW, grid.dt, "backward")
    return NoiseBundle(grid=grid, dB=dB, dW=dW, seed=int(seed))


def save_bundle(bundle, prefix):
    """Persist a bundle as flat binary arrays plus a JSON sidecar."""
    prefix = Path(prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    bundle.dB.astype("<f8").tofile(f"{prefix}.dB.bin")
    bundle.dW.astype("<f8").tofile(f"{prefix}.dW.bin")
    manifest = {
        "dims": {
            "m_paths": bundle.m_paths,
            "n_w_paths": bundle.n_w_paths,
            "steps": bundle.grid.steps,
            "d": bundle.d,
            "l": bundle.l,
        },
        "seed": bundle.seed,
        "grid": {"t0": bundle.grid.t0, "T": bundle.grid.T, "steps": bundle.grid.steps},
    }
    with open(f"{prefix}.json", "w") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=1)


def load_bundle(prefix):
    with open(f"{prefix}.json") as fh:
        manifest = json.load(fh)
    dims = manifest["dims"]
    grid = TimeGrid(**manifest["grid"])
    dB = np.fromfile(f"{prefix}.dB.bin", dtype="<f8").reshape(
        dims["m_paths"], dims["steps"], dims["d"]
    )
    dW = np.fromfile(f"{prefix}.dW.bin", dtype="<f8").reshape(
        dims["n_w_paths"], dims["steps"], dims["l"]
    )
    return NoiseBundle(grid=grid, dB=dB, dW=dW, seed=manifest["seed"])
