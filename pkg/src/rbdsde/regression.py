"""Monte Carlo conditional expectations by cross-sectional least squares.

The backward recursion repeatedly needs E[target | X_i = x] given a cloud of
(X_i, target) samples. Two bases are provided: total-degree polynomials for
smooth problems and a hypercube partition (piecewise constant) that is robust
to the clustered state distributions reflection produces near the boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement

import numpy as np

from .errors import ConfigError

_RIDGE_FACTOR = 1e-8
_QUANTILE_LO = 0.001
_QUANTILE_HI = 0.999


@dataclass(frozen=True)
class PolynomialBasis:
    """All monomials of total degree <= degree in dim variables."""

    degree: int
    dim: int

    def exponents(self):
        rows = []
        for q in range(self.degree + 1):
            for combo in combinations_with_replacement(range(self.dim), q):
                e = np.zeros(self.dim, dtype=int)
                for axis in combo:
                    e[axis] += 1
                rows.append(e)
        return np.array(rows, dtype=int)

    def design(self, x):
        exps = self.exponents()
        # (B, nb): product over axes of x_a^{e_a}
        return np.prod(x[:, None, :] ** exps[None, :, :], axis=2)

    @property
    def size(self):
        return self.exponents().shape[0]


@dataclass(frozen=True)
class LocalBasis:
    """Axis-aligned hypercube partition; each cell predicts its sample mean.

    Cell edges come from per-axis sample quantiles [0.1%, 99.9%] split
    uniformly. Cells holding fewer than min_count samples are merged into
    the nearest well-populated cell, as is any query cell never populated.
    """

    cells_per_axis: int
    dim: int
    min_count: int = 20

    @property
    def size(self):
        return self.cells_per_axis**self.dim


@dataclass(frozen=True)
class RegressionFn:
    """Fitted conditional-mean function; immutable and picklable."""

    kind: str
    dim: int
    k: int
    scalar: bool
    ridged: bool = False
    condition: float = 1.0
    coeffs: np.ndarray | None = None  # polynomial: (nb, k)
    exponents: np.ndarray | None = None  # polynomial: (nb, dim)
    edges: tuple = ()  # local: per-axis bin edges
    cell_values: np.ndarray | None = None  # local: (n_cells, k), fully merged
    cells_per_axis: int = 0

    def __call__(self, x):
        return evaluate(self, x)


def _as_2d(arr, name):
    a = np.asarray(arr, dtype=float)
    if a.ndim == 1:
        return a[:, None], True
    if a.ndim != 2:
        raise ConfigError(f"{name} must be 1- or 2-dimensional")
    return a, False


def _cell_index(basis, edges, x):
    # digitize against interior edges; clip keeps out-of-hull queries in the
    # outermost cells along each axis
    idx = np.zeros(x.shape[0], dtype=int)
    for a in range(basis.dim):
        pos = np.digitize(x[:, a], edges[a]) if edges[a].size else np.zeros(
            x.shape[0], dtype=int
        )
        idx = idx * basis.cells_per_axis + pos
    return idx


def _fit_polynomial(basis, x, y):
    design = basis.design(x)
    nb = design.shape[1]
    coef, _, rank, sv = np.linalg.lstsq(design, y, rcond=None)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else np.inf
    ridged = False
    if rank < nb:
        gram = design.T @ design
        lam = _RIDGE_FACTOR * np.trace(gram) / nb
        coef = np.linalg.solve(gram + lam * np.eye(nb), design.T @ y)
        ridged = True
    return coef, cond, ridged


def _fit_local(basis, x, y):
    edges = []
    for a in range(basis.dim):
        lo = np.quantile(x[:, a], _QUANTILE_LO)
        hi = np.quantile(x[:, a], _QUANTILE_HI)
        if hi <= lo:  # degenerate axis (deterministic predictor)
            edges.append(np.empty(0))
            continue
        edges.append(np.linspace(lo, hi, basis.cells_per_axis + 1)[1:-1])
    edges = tuple(edges)
    idx = _cell_index(basis, edges, x)
    n_cells = basis.cells_per_axis**basis.dim
    counts = np.bincount(idx, minlength=n_cells)
    sums = np.zeros((n_cells, y.shape[1]))
    np.add.at(sums, idx, y)

    anchors = np.flatnonzero(counts >= basis.min_count)
    if anchors.size == 0:
        anchors = np.flatnonzero(counts == counts.max())[:1]
    # merge every cell (populated-but-thin and empty alike) into the nearest
    # anchor by cell-center distance, pooling samples for the anchor means
    centers = _cell_centers(basis, edges)
    host = np.empty(n_cells, dtype=int)
    anchor_centers = centers[anchors]
    for start in range(0, n_cells, 4096):
        chunk = slice(start, min(start + 4096, n_cells))
        d2 = np.sum(
            (centers[chunk][:, None, :] - anchor_centers[None, :, :]) ** 2, axis=2
        )
        host[chunk] = anchors[np.argmin(d2, axis=1)]
    host[anchors] = anchors

    merged_sums = np.zeros_like(sums)
    merged_counts = np.zeros(n_cells)
    np.add.at(merged_sums, host, sums)
    np.add.at(merged_counts, host, counts.astype(float))
    values = np.zeros_like(sums)
    filled = merged_counts > 0
    values[filled] = merged_sums[filled] / merged_counts[filled][:, None]
    return edges, values[host]


def _cell_centers(basis, edges):
    axes = []
    for a in range(basis.dim):
        e = edges[a]
        if e.size == 0:
            axes.append(np.zeros(basis.cells_per_axis))
            continue
        width = e[1] - e[0] if e.size > 1 else 1.0
        full = np.concatenate([[e[0] - width], e, [e[-1] + width]])
        axes.append(0.5 * (full[:-1] + full[1:]))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.ravel() for g in mesh], axis=1)


def fit(basis, predictors, targets):
    """Least-squares projection of targets onto the basis span.

    predictors has one d-dimensional row per sample, targets one k-vector.
    Needs at least as many samples as basis functions. Polynomial fits that
    come back rank deficient are re-solved with a small ridge penalty
    (lambda = 1e-8 x trace scale) and flagged via ``ridged``.
    """
    x, _ = _as_2d(predictors, "predictors")
    y, scalar = _as_2d(targets, "targets")
    if x.shape[0] != y.shape[0]:
        raise ConfigError("predictors and targets must have equal sample counts")
    if x.shape[1] != basis.dim:
        raise ConfigError(
            f"predictor dimension {x.shape[1]} does not match basis dim {basis.dim}"
        )
    if x.shape[0] < basis.size:
        raise ConfigError(
            f"need at least {basis.size} samples for this basis, got {x.shape[0]}"
        )
    if isinstance(basis, PolynomialBasis):
        coef, cond, ridged = _fit_polynomial(basis, x, y)
        return RegressionFn(
            kind="polynomial",
            dim=basis.dim,
            k=y.shape[1],
            scalar=scalar,
            ridged=ridged,
            condition=cond,
            coeffs=coef,
            exponents=basis.exponents(),
        )
    if isinstance(basis, LocalBasis):
        edges, cell_values = _fit_local(basis, x, y)
        return RegressionFn(
            kind="local",
            dim=basis.dim,
            k=y.shape[1],
            scalar=scalar,
            edges=edges,
            cell_values=cell_values,
            cells_per_axis=basis.cells_per_axis,
            condition=1.0,
        )
    raise ConfigError(f"unknown basis type {type(basis).__name__}")


def evaluate(fn, x):
    """Fitted conditional mean at x (a single point or rows of points)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = x[None, :] if single else x
    if pts.shape[1] != fn.dim:
        raise ConfigError(
            f"point dimension {pts.shape[1]} does not match fitted dim {fn.dim}"
        )
    if fn.kind == "polynomial":
        design = np.prod(pts[:, None, :] ** fn.exponents[None, :, :], axis=2)
        out = design @ fn.coeffs
    else:
        idx = np.zeros(pts.shape[0], dtype=int)
        for a in range(fn.dim):
            e = fn.edges[a]
            pos = np.digitize(pts[:, a], e) if e.size else np.zeros(
                pts.shape[0], dtype=int
            )
            idx = idx * fn.cells_per_axis + pos
        out = fn.cell_values[idx]
    if fn.scalar:
        out = out[:, 0]
    return out[0] if single else out
