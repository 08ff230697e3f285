"""Pointwise evaluation of the value field u and its gradient proxy.

u(t, x) is read off the backward solver started at (t, x): the node-0 value
is u at the query point and the node functions along the way estimate
u(tau_i, .) near the forward cloud, so one solve per grid point fills a full
time-space lattice. Standard errors come from replicate solves on fresh
forward noise; the backward noise is one shared draw, because the field is
a functional of a single W realization and replicates must agree on it.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..bdsde import solve_reflected
from ..errors import ConfigError, DomainError, RBDSDEError
from ..stochastics import TimeGrid, sample_noise
from ..stochastics.noise import substream
from .norms import WeightedNorm


@dataclass(frozen=True)
class FieldConfig:
    """Solver budget for field evaluation at one grid point."""

    schedule: tuple = (64, 256)
    steps: int = 32
    m_paths: int = 2000
    n_w_paths: int = 1
    replicates: int = 4
    seed: int = 0
    tol_d: float = 0.1
    tol: float = 1e-2
    basis: Optional[object] = None
    picard_sweeps: Optional[int] = None

    def __post_init__(self):
        if self.replicates < 1:
            raise ConfigError("replicates must be at least 1", field="replicates")
        if self.tol_d <= 0.0:
            raise ConfigError("tol_d must be positive", field="tol_d")


@dataclass(frozen=True)
class FieldEstimate:
    """Value field on a time-space lattice with replicate standard errors.

    values[i, j] estimates u(times[i], grid[j]) as a k-vector; gradient
    holds the (k, d) gradient-sigma proxy read from Z. The terminal slice is
    the terminal map evaluated exactly, so its standard error is zero. dW is
    the shared backward-noise draw all replicates consumed; downstream
    assemblies that need the same W realization (the backward-integral term
    of the weak form) must read it from here.
    """

    problem: object
    t: float
    grid: np.ndarray
    times: np.ndarray
    values: np.ndarray
    se: np.ndarray
    gradient: np.ndarray
    gradient_se: np.ndarray
    dW: np.ndarray
    distance_max: float
    converged: np.ndarray
    worst_gap: float
    config: FieldConfig

    @property
    def u0(self):
        """Headline slice: u at the evaluation time, shape (G, k)."""
        return self.values[0]

    def rows(self):
        out = []
        d = self.grid.shape[1]
        for i, t in enumerate(self.times):
            for j in range(self.grid.shape[0]):
                for c in range(self.values.shape[2]):
                    row = {"t": float(t)}
                    for a in range(d):
                        row[f"x{a}"] = float(self.grid[j, a])
                    row["component"] = c
                    row["value"] = float(self.values[i, j, c])
                    row["std_error"] = float(self.se[i, j, c])
                    for a in range(d):
                        row[f"grad{a}"] = float(self.gradient[i, j, c, a])
                        row[f"grad{a}_se"] = float(self.gradient_se[i, j, c, a])
                    out.append(row)
        return out


def _spread(stack):
    if stack.shape[0] < 2:
        return np.zeros(stack.shape[1:])
    return np.std(stack, axis=0, ddof=1) / np.sqrt(stack.shape[0])


def evaluate_field(problem, x_grid, t, cfg=None):
    """Estimate u(t, .) and its gradient proxy on a grid of start points.

    Each grid point gets its own ladder of penalized solves (common forward
    noise inside the ladder, fresh noise across replicates). t = T is the
    degenerate case where the field is the terminal map itself; it is
    returned exactly, with the gradient left undefined.
    """
    cfg = cfg or FieldConfig()
    grid = np.asarray(x_grid, dtype=float)
    if grid.ndim == 1:
        grid = grid[:, None]
    if grid.ndim != 2 or grid.shape[1] != problem.d or grid.shape[0] < 1:
        raise ConfigError(f"x grid must have shape (G, {problem.d})")
    if not 0.0 <= t <= problem.T:
        raise ConfigError(f"evaluation time {t} outside [0, {problem.T}]")
    G = grid.shape[0]
    k, d, l = problem.k, problem.d, problem.l

    if abs(problem.T - t) < 1e-12 * (1.0 + problem.T):
        vals = np.asarray(problem.Phi(grid), dtype=float)[None]
        zeros = np.zeros_like(vals)
        grad = np.full((1, G, k, d), np.nan)
        return FieldEstimate(
            problem=problem,
            t=float(problem.T),
            grid=grid,
            times=np.array([problem.T]),
            values=vals,
            se=zeros,
            gradient=grad,
            gradient_se=np.zeros_like(grad),
            dW=np.zeros((cfg.n_w_paths, 0, l)),
            distance_max=0.0,
            converged=np.ones(G, dtype=bool),
            worst_gap=0.0,
            config=cfg,
        )

    grid_t = TimeGrid(t, problem.T, cfg.steps)
    master_seed = int(substream(cfg.seed, "backward").integers(2**62))
    master_dw = sample_noise(grid_t, d, l, 1, cfg.n_w_paths, master_seed).dW

    n_nodes = cfg.steps + 1
    vals = np.empty((cfg.replicates, n_nodes, G, k))
    grads = np.empty((cfg.replicates, n_nodes, G, k, d))
    converged = np.ones(G, dtype=bool)
    worst_gap = 0.0
    for r in range(cfg.replicates):
        for j in range(G):
            child = int(
                substream(cfg.seed, "replicate", index=r * G + j + 1).integers(2**62)
            )
            bundle = sample_noise(grid_t, d, l, cfg.m_paths, cfg.n_w_paths, child)
            bundle = dataclasses.replace(bundle, dW=master_dw)
            try:
                sol = solve_reflected(
                    problem,
                    bundle,
                    cfg.schedule,
                    x0=grid[j],
                    basis=cfg.basis,
                    picard_sweeps=cfg.picard_sweeps,
                    tol=cfg.tol,
                )
            except RBDSDEError as exc:
                raise type(exc)(
                    f"grid point {j} (x = {np.array2string(grid[j], precision=4)}): {exc}"
                ) from exc
            fin = sol.finest
            pt = grid[j : j + 1]
            for i in range(n_nodes):
                vals[r, i, j] = fin.value_at(pt, node=i)[0]
                grads[r, i, j] = fin.gradient_proxy_at(pt, node=i)[0]
            converged[j] &= sol.converged
            worst_gap = max(worst_gap, float(sol.cauchy[-1]["gap"]))

    values = np.mean(vals, axis=0)
    gradient = np.mean(grads, axis=0)
    se = _spread(vals)
    gradient_se = _spread(grads)

    # terminal slice is data, not a resolvent output; measure the rest
    interior = values[:-1].reshape(-1, k)
    dist = np.linalg.norm(interior - problem.domain._project(interior), axis=1)
    distance_max = float(np.max(dist)) if dist.size else 0.0
    if problem.terminal_range == "error" and distance_max > cfg.tol_d:
        raise DomainError(
            f"field leaves the domain closure by {distance_max:.3g} "
            f"(tol_d = {cfg.tol_d:.3g}); refine n or widen tol_d"
        )

    return FieldEstimate(
        problem=problem,
        t=float(t),
        grid=grid,
        times=np.asarray(grid_t.nodes),
        values=values,
        se=se,
        gradient=gradient,
        gradient_se=gradient_se,
        dW=master_dw,
        distance_max=distance_max,
        converged=converged,
        worst_gap=worst_gap,
        config=cfg,
    )


def flow_composition_gap(field, solution, p=None):
    """Weighted RMS mismatch between the field and pathwise values.

    The representation says u(s, X_{t,s}(x)) and Y_s agree; this interpolates
    the field at the solution's own path states and returns
    sqrt(sum rho |u - Y|^2 / sum rho) over all nodes and paths. Desk scale:
    d = 1, matching time grids.
    """
    if field.grid.shape[1] != 1:
        raise ConfigError("flow composition gap supports d = 1 only")
    times = np.asarray(solution.grid.nodes)
    if times.shape != field.times.shape or not np.allclose(times, field.times):
        raise ConfigError("field and solution time grids differ")
    norm = WeightedNorm(p if p is not None else field.problem.d + 2, 1)
    xg = field.grid[:, 0]
    y = np.mean(solution.y_paths, axis=0)
    states = solution.states[:, :, 0]
    k = y.shape[2]
    num = 0.0
    den = 0.0
    for i in range(times.size):
        x_i = states[:, i]
        rho = norm.weight(x_i[:, None])
        diff2 = np.zeros_like(x_i)
        for c in range(k):
            u_i = np.interp(x_i, xg, field.values[i, :, c])
            diff2 += (u_i - y[:, i, c]) ** 2
        num += float(np.sum(rho * diff2))
        den += float(np.sum(rho))
    return float(np.sqrt(num / den)) if den > 0.0 else 0.0
