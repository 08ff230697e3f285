"""Weighted norms and the forward-flow norm-equivalence study.

The weight (1 + |x|)^{-p} with p > d + 1 makes constants integrable, so
value fields that grow linearly still have finite weighted L2 norm. The
equivalence check measures how far the flow pushforward deforms that norm:
the ratio of the flowed integral to the plain one must stay inside a fixed
positive interval as the Monte Carlo budget grows.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..stochastics import TimeGrid, forward_flow, sample_noise
from ..stochastics.noise import substream

_DEFAULT_CELLS = {1: 100001, 2: 401, 3: 41}
_CHUNK = 1 << 20


@dataclass(frozen=True)
class WeightedNorm:
    """Integration weight rho(x) = (1 + |x|)^(-p) on R^dim, p > dim + 1."""

    p: float
    dim: int

    def __post_init__(self):
        if self.dim < 1:
            raise ConfigError("dimension must be positive", field="dim")
        if not self.p > self.dim + 1:
            raise ConfigError(
                f"weight exponent p = {self.p} must exceed dim + 1 = {self.dim + 1}",
                field="p",
            )

    def weight(self, x):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x.reshape(-1, self.dim), axis=1)
        return (1.0 + r) ** (-self.p)

    def tail_mass(self, radius):
        """Upper bound on the weight mass outside |x| > radius."""
        if radius < 0.0:
            raise ConfigError("radius must be nonnegative")
        p, d = self.p, self.dim
        if d == 1:
            return 2.0 * (1.0 + radius) ** (1.0 - p) / (p - 1.0)
        # r^(d-1) <= (1+r)^(d-1) turns the shell integral into a closed form
        surface = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        return surface * (1.0 + radius) ** (d - p) / (p - d)

    def truncation_radius(self, tol):
        """Smallest radius whose tail-mass bound is below tol."""
        if not tol > 0.0:
            raise ConfigError("truncation tolerance must be positive")
        p, d = self.p, self.dim
        if d == 1:
            return max((2.0 / ((p - 1.0) * tol)) ** (1.0 / (p - 1.0)) - 1.0, 0.0)
        surface = 2.0 * math.pi ** (d / 2.0) / math.gamma(d / 2.0)
        return max((surface / ((p - d) * tol)) ** (1.0 / (p - d)) - 1.0, 0.0)


def _call_values(fn, x, dim):
    out = np.asarray(fn(x), dtype=float)
    if out.ndim == 1:
        out = out[:, None]
    if out.shape[0] != x.shape[0]:
        raise ConfigError(
            f"function returned {out.shape[0]} rows for {x.shape[0]} points"
        )
    return out


def weighted_norm(target, norm, truncation_tol=1e-4, n_cells=None, node=0):
    """Weighted L2 norm (integral of |u|^2 rho)^(1/2) by midpoint quadrature.

    target is either a field estimate (its own grid is the quadrature grid,
    sliced at time index ``node``) or a callable x -> values, for which a
    uniform grid is built out to the truncation radius of the weight. A
    field grid that covers less than the radius demanded by truncation_tol
    triggers a truncation warning rather than an error: the field knows its
    region of validity better than the weight does.
    """
    if hasattr(target, "grid") and hasattr(target, "values"):
        grid = np.asarray(target.grid, dtype=float)
        if grid.shape[1] != 1 or norm.dim != 1:
            raise ConfigError("field-mode weighted norms support d = 1 only")
        x = grid[:, 0]
        if x.size < 2 or np.any(np.diff(x) <= 0.0):
            raise ConfigError("field grid must be strictly increasing")
        h = float(x[1] - x[0])
        if np.max(np.abs(np.diff(x) - h)) > 1e-9 * (1.0 + h):
            raise ConfigError("field grid must be uniformly spaced")
        cover = max(abs(x[0]), abs(x[-1])) + 0.5 * h
        tail = norm.tail_mass(cover)
        if tail > truncation_tol:
            warnings.warn(
                f"field grid covers |x| <= {cover:.3g}; weight tail mass "
                f"{tail:.2e} exceeds the declared truncation tolerance "
                f"{truncation_tol:.2e}",
                RuntimeWarning,
                stacklevel=2,
            )
        vals = np.asarray(target.values[node], dtype=float)
        total = float(np.sum(norm.weight(grid) * np.sum(vals**2, axis=1)) * h)
        return math.sqrt(max(total, 0.0))

    if not callable(target):
        raise ConfigError("target must be a field estimate or a callable")
    d = norm.dim
    if n_cells is None:
        if d not in _DEFAULT_CELLS:
            raise ConfigError("pass n_cells explicitly for dim > 3")
        n_cells = _DEFAULT_CELLS[d]
    radius = norm.truncation_radius(truncation_tol)
    edges = np.linspace(-radius, radius, n_cells + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    h = edges[1] - edges[0]
    if d == 1:
        total = 0.0
        for lo in range(0, n_cells, _CHUNK):
            x = mids[lo : lo + _CHUNK][:, None]
            vals = _call_values(target, x, d)
            total += float(np.sum(norm.weight(x) * np.sum(vals**2, axis=1)))
        return math.sqrt(max(total * h, 0.0))
    axes = np.meshgrid(*([mids] * d), indexing="ij")
    pts = np.stack([a.reshape(-1) for a in axes], axis=1)
    vals = _call_values(target, pts, d)
    total = float(np.sum(norm.weight(pts) * np.sum(vals**2, axis=1)) * h**d)
    return math.sqrt(max(total, 0.0))


@dataclass(frozen=True)
class NormEquivalenceReport:
    """Pushforward-to-plain weighted-integral ratios per test function.

    ratios is indexed (budget level, test function); the interval
    [ratio_min, ratio_max] across everything is the reported evidence, and
    drift_max is the largest relative movement of any ratio from the first
    budget level to the last.
    """

    t: float
    s: float
    m_levels: tuple
    ratios: np.ndarray
    outer: np.ndarray
    ratio_min: float
    ratio_max: float
    drift_max: float

    def rows(self):
        out = []
        for li, m in enumerate(self.m_levels):
            for fi in range(self.ratios.shape[1]):
                out.append(
                    {"m_paths": m, "phi": fi, "ratio": float(self.ratios[li, fi])}
                )
        return out


def norm_equivalence_check(
    problem,
    phis,
    t,
    s,
    m_paths=128,
    doublings=1,
    steps=16,
    n_cells=1601,
    truncation_tol=1e-4,
    p=None,
    seed=0,
):
    """Measure both sides of the flow norm-equivalence sandwich.

    For each test function the quadrature compares int E|phi(X_{t,s}(x))|
    rho(x) dx against int |phi(x)| rho(x) dx on one shared midpoint grid,
    with the expectation taken over m_paths forward paths per grid point.
    The budget doubles ``doublings`` times so the report shows whether the
    ratios have stabilized. Desk scale: d = 1.
    """
    if problem.d != 1:
        raise ConfigError("norm equivalence check supports d = 1 only")
    if not 0.0 <= t < s <= problem.T:
        raise ConfigError(f"need 0 <= t < s <= T, got t = {t}, s = {s}")
    if not phis:
        raise ConfigError("at least one test function is required")
    norm = WeightedNorm(p if p is not None else problem.d + 2, problem.d)
    radius = norm.truncation_radius(truncation_tol)
    edges = np.linspace(-radius, radius, n_cells + 1)
    mids = 0.5 * (edges[:-1] + edges[1:])
    h = float(edges[1] - edges[0])
    x_grid = mids[:, None]
    rho = norm.weight(x_grid)

    outer = np.empty(len(phis))
    for fi, phi in enumerate(phis):
        outer[fi] = float(np.sum(rho * np.abs(np.asarray(phi(x_grid), float))) * h)
        if not outer[fi] > 0.0:
            raise ConfigError(f"test function {fi} has zero weighted mass")

    m_levels = tuple(m_paths * 2**j for j in range(doublings + 1))
    grid_t = TimeGrid(t, s, steps)
    ratios = np.empty((len(m_levels), len(phis)))
    for li, m in enumerate(m_levels):
        level_seed = int(substream(seed, "replicate", index=li).integers(2**62))
        bundle = sample_noise(grid_t, problem.d, 1, mids.size * m, 1, level_seed)
        starts = np.repeat(x_grid, m, axis=0)
        ens = forward_flow(problem, bundle, starts)
        x_end = ens.states[:, -1]
        for fi, phi in enumerate(phis):
            vals = np.abs(np.asarray(phi(x_end), dtype=float)).reshape(mids.size, m)
            middle = float(np.sum(rho * np.mean(vals, axis=1)) * h)
            ratios[li, fi] = middle / outer[fi]
    first, last = ratios[0], ratios[-1]
    drift = float(np.max(np.abs(last / first - 1.0))) if len(m_levels) > 1 else 0.0
    return NormEquivalenceReport(
        t=float(t),
        s=float(s),
        m_levels=m_levels,
        ratios=ratios,
        outer=outer,
        ratio_min=float(np.min(ratios)),
        ratio_max=float(np.max(ratios)),
        drift_max=drift,
    )
