"""Penalized backward solver on a simulated forward cloud.

One penalization level n is solved by a backward recursion over the time
grid. Per backward-noise path and per node, two cross-sectional regressions
estimate the conditional expectations, the generator is added with Picard
sweeps over the whole recursion, and the constraint enters through the
semi-implicit resolvent step

    y + n dt (y - pi(y)) = v,

whose increment dk = y - v is the penalty-force accumulation over one step.
A ladder of levels with common random numbers gives the reflected solution
by Richardson extrapolation in 1/n.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import ConfigError, DivergenceError
from ..geometry.domains import resolvent_step
from ..regression import PolynomialBasis, evaluate, fit
from ..stochastics.flows import forward_flow
from ..stochastics.noise import substream
from .problem import ProblemSpec

_DEGREE_BY_DIM = {1: 8, 2: 6, 3: 4}
_PICARD_SWEEPS = 3
_PICARD_INNER = 2


def default_basis(dim, m_paths=None):
    """Total-degree polynomial basis sized to the state dimension.

    Late backward nodes carry value functions whose curvature lives on the
    one-step scale, so low degrees bias the conditional means; in one or two
    dimensions a higher degree is affordable and markedly sharper. The
    degree backs off until the design stays overdetermined by a wide margin.
    """
    degree = _DEGREE_BY_DIM.get(dim, 3)
    while degree > 1:
        basis = PolynomialBasis(degree=degree, dim=dim)
        if m_paths is None or basis.size * 10 <= m_paths:
            return basis
        degree -= 1
    return PolynomialBasis(degree=1, dim=dim)


def start_cloud(problem, grid, m_paths, x0, seed):
    """Gaussian cloud around the query point with one-step spread.

    The spread sqrt(dt) keeps the node-0 regression well conditioned while
    the cloud stays close enough to x0 that the fitted value at x0 is a
    genuine local estimate.
    """
    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1), (problem.d,))
    rng = substream(seed, "start")
    spread = np.sqrt(grid.dt)
    return x0 + spread * rng.standard_normal((m_paths, problem.d))


class _NodeFit:
    """One node's stacked regression with predictor standardization."""

    __slots__ = ("fn", "mu", "sd", "k", "d")

    def __init__(self, fn, mu, sd, k, d):
        self.fn = fn
        self.mu = mu
        self.sd = sd
        self.k = k
        self.d = d

    def eval(self, x):
        out = evaluate(self.fn, (x - self.mu) / self.sd)
        z = out[:, : self.k * self.d].reshape(-1, self.k, self.d)
        v = out[:, self.k * self.d :]
        return z, v


def _fit_node(basis, x, targets, k, d):
    mu = x.mean(axis=0)
    sd = x.std(axis=0)
    sd = np.where(sd > 0.0, sd, 1.0)
    fn = fit(basis, (x - mu) / sd, targets)
    pack = _NodeFit(fn, mu, sd, k, d)
    z, v = pack.eval(x)
    return pack, z, v


@dataclass(frozen=True)
class NodeValue:
    """Evaluate (Y_i, Z_i, dK_i) of the final sweep at arbitrary states.

    Terminal node: Y is the terminal map itself and Z the extra regression.
    Interior nodes rebuild the node value from the stored conditional-mean
    fit, the generator (with its local fixed point), and the resolvent.
    """

    problem: ProblemSpec
    node: int
    t: float
    lam: float
    dt: float
    terminal: bool
    pack: _NodeFit

    def _flat(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        return x.reshape(-1, self.problem.d), single

    def with_increment(self, x):
        """Return (y, z, dk) at states x; leading axis preserved."""
        flat, single = self._flat(x)
        z, v0 = self.pack.eval(flat)
        if self.terminal:
            y = np.asarray(self.problem.Phi(flat), dtype=float)
            dk = np.zeros_like(y)
        else:
            if self.problem.f is not None:
                y_hat, _ = resolvent_step(self.problem.domain, v0, self.lam)
                for _ in range(_PICARD_INNER):
                    v = v0 + self.dt * np.asarray(
                        self.problem.f(self.t, flat, y_hat, z), dtype=float
                    )
                    y_hat, _ = resolvent_step(self.problem.domain, v, self.lam)
            else:
                v = v0
            y, dk = resolvent_step(self.problem.domain, v, self.lam)
        if single:
            return y[0], z[0], dk[0]
        return y, z, dk

    def __call__(self, x):
        return self.with_increment(x)[0]

    def z(self, x):
        return self.with_increment(x)[1]


@dataclass(frozen=True)
class PenalizedSolution:
    """Backward solution at one penalization level.

    Path arrays are indexed (w, m, i, ...) over backward-noise path w,
    forward path m, and grid node i. k_paths holds the running accumulation
    K_i = sum of increments before node i, so K_0 = 0 and each increment is
    a nonnegative multiple of pi(Y_i) - Y_i. The node functions are nested
    per backward path, y_fns[w][i], because the value field depends on the
    backward noise whenever h is present. Diagnostics aggregate over all
    paths; the supremum of the fourth-power distance excludes the terminal
    node, where the value is data rather than a resolvent output.
    """

    problem: ProblemSpec
    n: float
    grid: object
    ensemble: object
    start_points: np.ndarray
    y_fns: tuple
    z_fns: tuple
    y_paths: np.ndarray
    z_paths: np.ndarray
    dk_paths: np.ndarray
    k_paths: np.ndarray
    diagnostics: dict

    @property
    def states(self):
        return self.ensemble.states

    def value_at(self, x, node=0):
        """Node value averaged over backward paths; (..., k)."""
        vals = [fn_row[node](x) for fn_row in self.y_fns]
        return np.mean(np.stack(vals), axis=0)

    def gradient_proxy_at(self, x, node=0):
        vals = [fn_row[node].z(x) for fn_row in self.y_fns]
        return np.mean(np.stack(vals), axis=0)


def _terminal_z_fit(problem, basis, states, dB, dt):
    """Extra regression for the terminal Z: targets Phi(X_N) dB^T / dt."""
    m = states.shape[0]
    xi = np.asarray(problem.Phi(states[:, -1]), dtype=float)
    targets = (xi[:, :, None] * dB[:, -1][:, None, :] / dt).reshape(m, -1)
    pack, _, _ = _fit_node(basis, states[:, -2], targets, problem.k, problem.d)
    # pad the stacked layout with the terminal map so eval() splits cleanly
    return _NodeFit(pack.fn, pack.mu, pack.sd, problem.k, problem.d), xi


class _TerminalPack:
    """Adapter: z columns from the extra regression, v columns unused."""

    __slots__ = ("inner", "k", "d")

    def __init__(self, inner, k, d):
        self.inner = inner
        self.k = k
        self.d = d

    def eval(self, x):
        out = evaluate(self.inner.fn, (x - self.inner.mu) / self.inner.sd)
        z = out.reshape(-1, self.k, self.d)
        return z, np.zeros((x.shape[0], self.k))


def solve_penalized(
    problem: ProblemSpec,
    bundle,
    n: float,
    x0=None,
    start_points=None,
    basis=None,
    picard_sweeps: Optional[int] = None,
    ensemble=None,
) -> PenalizedSolution:
    """Run the penalized backward recursion at level n.

    The forward cloud is shared across backward-noise paths (it does not
    depend on them); pass a precomputed ensemble to share it across levels
    as well, which makes a level ladder a common-random-number family.
    """
    if n < 0:
        raise ConfigError("penalization level n must be nonnegative", field="n")
    grid = bundle.grid
    dt = grid.dt
    lam = n * dt
    n_steps = grid.steps
    m = bundle.m_paths
    n_w = bundle.n_w_paths
    k, d = problem.k, problem.d
    nodes = grid.nodes
    if basis is None:
        basis = default_basis(d, m)
    if picard_sweeps is None:
        picard_sweeps = _PICARD_SWEEPS if problem.f is not None else 1
    if picard_sweeps < 1:
        raise ConfigError("picard_sweeps must be at least 1", field="picard_sweeps")

    if ensemble is None:
        if start_points is None:
            if x0 is None:
                raise ConfigError("either x0, start_points, or ensemble is required")
            start_points = start_cloud(problem, grid, m, x0, bundle.seed)
        else:
            start_points = np.asarray(start_points, dtype=float).reshape(m, d)
        ensemble = forward_flow(problem, bundle, start_points)
    else:
        start_points = ensemble.start_points
    states = ensemble.states
    dB = bundle.dB
    dW = bundle.dW

    term_fit, xi = _terminal_z_fit(problem, basis, states, dB, dt)
    term_pack = _TerminalPack(term_fit, k, d)
    z_term, _ = term_pack.eval(states[:, -1])

    y_paths = np.empty((n_w, m, n_steps + 1, k))
    z_paths = np.empty((n_w, m, n_steps + 1, k, d))
    dk_paths = np.empty((n_w, m, n_steps, k))
    y_fns = []
    terminal_fn = NodeValue(problem, n_steps, nodes[-1], lam, dt, True, term_pack)

    for w in range(n_w):
        node_fns = [None] * (n_steps + 1)
        y_all = np.empty((m, n_steps + 1, k))
        z_all = np.empty((m, n_steps + 1, k, d))
        dk_all = np.empty((m, n_steps, k))
        y_all[:, -1] = xi
        z_all[:, -1] = z_term
        y_hat_all = None

        for sweep in range(picard_sweeps):
            keep = sweep == picard_sweeps - 1
            for i in range(n_steps - 1, -1, -1):
                t_next = nodes[i + 1]
                y_next = y_all[:, i + 1]
                carry = y_next
                if problem.h is not None:
                    h_next = np.asarray(
                        problem.h(t_next, states[:, i + 1], y_next, z_all[:, i + 1]),
                        dtype=float,
                    )
                    carry = y_next + np.einsum("mkl,l->mk", h_next, dW[w, i])
                z_targets = (
                    carry[:, :, None] * dB[:, i][:, None, :] / dt
                ).reshape(m, k * d)
                stacked = np.concatenate([z_targets, carry], axis=1)
                pack, z_i, v0 = _fit_node(basis, states[:, i], stacked, k, d)
                if problem.f is not None:
                    if y_hat_all is None:
                        y_hat, _ = resolvent_step(problem.domain, v0, lam)
                    else:
                        y_hat = y_hat_all[:, i]
                    v = v0 + dt * np.asarray(
                        problem.f(nodes[i], states[:, i], y_hat, z_i), dtype=float
                    )
                else:
                    v = v0
                y_i, dk_i = resolvent_step(problem.domain, v, lam)
                if not np.all(np.isfinite(y_i)):
                    raise DivergenceError(
                        f"backward value lost finiteness at node {i} "
                        f"(level n = {n}, sweep {sweep})",
                        step=i,
                    )
                y_all[:, i] = y_i
                z_all[:, i] = z_i
                dk_all[:, i] = dk_i
                if keep:
                    node_fns[i] = NodeValue(
                        problem, i, float(nodes[i]), lam, dt, False, pack
                    )
            if problem.f is not None:
                y_hat_all = y_all.copy()

        node_fns[-1] = terminal_fn
        y_fns.append(tuple(node_fns))
        y_paths[w] = y_all
        z_paths[w] = z_all
        dk_paths[w] = dk_all

    z_fns = tuple(tuple(fn.z for fn in row) for row in y_fns)
    k_paths = np.concatenate(
        [np.zeros((n_w, m, 1, k)), np.cumsum(dk_paths, axis=2)], axis=2
    )

    diagnostics = _diagnostics(problem, grid, n, states, y_paths, z_paths, dk_paths)
    return PenalizedSolution(
        problem=problem,
        n=float(n),
        grid=grid,
        ensemble=ensemble,
        start_points=start_points,
        y_fns=tuple(y_fns),
        z_fns=z_fns,
        y_paths=y_paths,
        z_paths=z_paths,
        dk_paths=dk_paths,
        k_paths=k_paths,
        diagnostics=diagnostics,
    )


def _diagnostics(problem, grid, n, states, y_paths, z_paths, dk_paths):
    dt = grid.dt
    lam = n * dt
    y_sq = np.sum(y_paths**2, axis=-1)
    sup_y2 = np.max(y_sq, axis=-1)
    int_z2 = dt * np.sum(z_paths[:, :, :-1] ** 2, axis=(-3, -2, -1))
    dk_norm = np.linalg.norm(dk_paths, axis=-1)
    k_vt = np.sum(dk_norm, axis=-1)
    if lam > 0.0:
        dist = dk_norm / lam
    else:
        flat = y_paths[:, :, :-1].reshape(-1, problem.k)
        proj = problem.domain._project(flat)
        dist = np.linalg.norm(flat - proj, axis=1).reshape(dk_norm.shape)
    int_d2 = dt * np.sum(dist**2, axis=-1)
    sup_d4 = np.max(dist, axis=-1) ** 4

    xi = y_paths[:, :, -1]
    t_mid = grid.nodes[:-1]
    f0 = np.stack(
        [problem.f_at_origin(t, states[:, i]) for i, t in enumerate(t_mid)], axis=1
    )
    h0 = np.stack(
        [problem.h_at_origin(t, states[:, i]) for i, t in enumerate(t_mid)], axis=1
    )
    data = (
        np.sum(xi**2, axis=-1)
        + dt * (np.sum(f0**2, axis=(-2, -1)) + np.sum(h0**2, axis=(-3, -2, -1)))
    )

    out = {
        "sup_y2": float(np.mean(sup_y2)),
        "int_z2": float(np.mean(int_z2)),
        "k_total_variation": float(np.mean(k_vt)),
        "int_d2": float(np.mean(int_d2)),
        "sup_d4": float(np.mean(sup_d4)),
        "bound_var2": float(np.mean(k_vt**2)),
        "sup_y4": float(np.mean(sup_y2**2)),
        "int_z2_sq": float(np.mean(int_z2**2)),
        "data_functional": float(np.mean(data)),
    }
    bad = [name for name, value in out.items() if not np.isfinite(value)]
    if bad:
        raise DivergenceError(f"non-finite diagnostics: {', '.join(bad)}")
    return out


@dataclass(frozen=True)
class RBDSDESolution:
    """Ladder of penalized solves with extrapolated limit values.

    cauchy holds one row per consecutive pair of levels: the mean over
    common paths of sup_i |Y^coarse_i - Y^fine_i|^2. y0 and z0 are the
    Richardson limits (rate 1/n) of the node-0 values at the query point;
    the largest-level solution carries the force paths and reports.
    """

    problem: ProblemSpec
    x0: np.ndarray
    schedule: tuple
    solutions: tuple
    y0_by_n: np.ndarray
    z0_by_n: np.ndarray
    y0: np.ndarray
    z0: np.ndarray
    cauchy: tuple
    converged: bool
    message: str
    skorohod: object
    distance_interior_max: float
    distance_terminal_max: float

    @property
    def finest(self):
        return self.solutions[-1]


def cauchy_gap(coarse: PenalizedSolution, fine: PenalizedSolution) -> float:
    """Mean over shared paths of the squared uniform gap between levels."""
    diff = coarse.y_paths - fine.y_paths
    gap = np.max(np.sum(diff**2, axis=-1), axis=-1)
    return float(np.mean(gap))


def solve_reflected(
    problem: ProblemSpec,
    bundle,
    schedule: Sequence[float],
    x0,
    basis=None,
    picard_sweeps: Optional[int] = None,
    tol: float = 1e-2,
    interior_margin: float = 0.05,
    z_samples: int = 20,
) -> RBDSDESolution:
    """Solve the reflected system by an increasing penalization ladder.

    All levels share the noise bundle and the forward cloud, so consecutive
    solutions are pathwise comparable. Convergence is declared when the
    uniform gap between the last two levels falls below tol; a ladder whose
    gaps do not decay is reported as non-convergent rather than silently
    extrapolated.
    """
    from .checks import check_skorohod

    schedule = tuple(float(v) for v in schedule)
    if len(schedule) < 2:
        raise ConfigError("schedule needs at least two levels", field="schedule")
    if any(b <= a for a, b in zip(schedule, schedule[1:])):
        raise ConfigError("schedule must be strictly increasing", field="schedule")

    x0 = np.broadcast_to(np.asarray(x0, dtype=float).reshape(-1), (problem.d,))
    start = start_cloud(problem, bundle.grid, bundle.m_paths, x0, bundle.seed)
    ensemble = forward_flow(problem, bundle, start)

    solutions = []
    for n in schedule:
        solutions.append(
            solve_penalized(
                problem,
                bundle,
                n,
                basis=basis,
                picard_sweeps=picard_sweeps,
                ensemble=ensemble,
            )
        )

    gaps = tuple(
        {
            "n_coarse": schedule[j],
            "n_fine": schedule[j + 1],
            "gap": cauchy_gap(solutions[j], solutions[j + 1]),
        }
        for j in range(len(schedule) - 1)
    )

    point = x0[None, :]
    y0_by_n = np.stack([np.asarray(s.value_at(point))[0] for s in solutions])
    z0_by_n = np.stack([np.asarray(s.gradient_proxy_at(point))[0] for s in solutions])
    n1, n2 = schedule[-2], schedule[-1]
    w2 = n2 / (n2 - n1)
    w1 = n1 / (n2 - n1)
    y0 = w2 * y0_by_n[-1] - w1 * y0_by_n[-2]
    z0 = w2 * z0_by_n[-1] - w1 * z0_by_n[-2]

    last_gap = gaps[-1]["gap"]
    first_gap = gaps[0]["gap"]
    decayed = last_gap < first_gap
    converged = bool(np.sqrt(last_gap) < tol)
    if converged:
        message = (
            f"converged: uniform gap {np.sqrt(last_gap):.3e} below tol {tol:.1e} "
            f"between n = {n1:g} and n = {n2:g}"
        )
    elif not decayed:
        message = (
            f"non-convergent ladder: uniform gap did not decay "
            f"({first_gap:.3e} -> {last_gap:.3e}); do not trust the "
            f"extrapolated values"
        )
    else:
        message = (
            f"gap decaying but still above tol "
            f"({np.sqrt(last_gap):.3e} >= {tol:.1e}); extend the schedule"
        )

    finest = solutions[-1]
    report = check_skorohod(
        finest, interior_margin=interior_margin, z_samples=z_samples
    )

    flat = finest.y_paths[:, :, :-1].reshape(-1, problem.k)
    proj = problem.domain._project(flat)
    d_int = float(np.max(np.linalg.norm(flat - proj, axis=1))) if flat.size else 0.0
    term = finest.y_paths[:, :, -1].reshape(-1, problem.k)
    proj_t = problem.domain._project(term)
    d_term = float(np.max(np.linalg.norm(term - proj_t, axis=1)))

    return RBDSDESolution(
        problem=problem,
        x0=x0,
        schedule=schedule,
        solutions=tuple(solutions),
        y0_by_n=y0_by_n,
        z0_by_n=z0_by_n,
        y0=y0,
        z0=z0,
        cauchy=gaps,
        converged=converged,
        message=message,
        skorohod=report,
        distance_interior_max=d_int,
        distance_terminal_max=d_term,
    )
