"""Structural checks on penalized solutions.

Two properties identify the limiting force K: the variational inequality
sum_i (Y_i - z)^T dK_i <= 0 against every constant z in the closure, and the
support condition that dK carries no mass while Y sits strictly inside the
domain. Both are estimated pathwise with standard errors. The decay study
and the estimate report track the distance moments and the a priori bounds
across penalization levels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError
from ..stochastics.noise import substream
from .solver import solve_penalized

_Z_SEED = 53110947


@dataclass(frozen=True)
class SkorohodReport:
    """Minimality and support evidence for the force paths of one solution.

    minimality_mean[j] is the path average of sum_i (Y_i - z_j) . dK_i for
    the j-th probe point z_j of the closure; the variational inequality
    demands it be nonpositive up to Monte Carlo error. interior_mass is the
    fraction of total-variation mass of dK spent while Y lies deeper than
    interior_margin inside the domain (depth measured to the boundary), and
    must vanish in the limit.
    """

    z_points: np.ndarray
    minimality_mean: np.ndarray
    minimality_se: np.ndarray
    worst_mean: float
    worst_se: float
    interior_margin: float
    interior_mass: float
    total_variation: float

    @property
    def minimality_ok(self):
        return bool(np.all(self.minimality_mean <= 2.0 * self.minimality_se))


def check_skorohod(solution, interior_margin=0.05, z_samples=20, seed=_Z_SEED):
    """Estimate the variational inequality and the support condition."""
    if z_samples < 1:
        raise ConfigError("z_samples must be positive", field="z_samples")
    problem = solution.problem
    rng = substream(seed, "replicate")
    z_points = problem.domain.sample_closure(rng, z_samples)

    y = solution.y_paths[:, :, :-1]
    dk = solution.dk_paths
    n_paths = y.shape[0] * y.shape[1]

    means = np.empty(z_samples)
    ses = np.empty(z_samples)
    for j in range(z_samples):
        offset = y - z_points[j]
        per_path = np.sum(offset * dk, axis=(-2, -1)).reshape(-1)
        means[j] = float(np.mean(per_path))
        ses[j] = float(np.std(per_path) / math.sqrt(max(n_paths, 1)))
    worst = int(np.argmax(means))

    dk_norm = np.linalg.norm(dk, axis=-1)
    total = float(np.sum(dk_norm))
    if total > 0.0:
        flat = y.reshape(-1, problem.k)
        outside = np.linalg.norm(flat - problem.domain._project(flat), axis=1)
        depth = problem.domain.boundary_distance(flat)
        depth = np.where(outside > 1e-12 * (1.0 + depth), 0.0, depth)
        deep = (depth > interior_margin).reshape(dk_norm.shape)
        interior_mass = float(np.sum(dk_norm[deep]) / total)
    else:
        interior_mass = 0.0

    return SkorohodReport(
        z_points=z_points,
        minimality_mean=means,
        minimality_se=ses,
        worst_mean=float(means[worst]),
        worst_se=float(ses[worst]),
        interior_margin=float(interior_margin),
        interior_mass=interior_mass,
        total_variation=total,
    )


@dataclass(frozen=True)
class DecayStudy:
    """Distance moments against the penalization level, with fitted slopes."""

    levels: np.ndarray
    int_d2: np.ndarray
    sup_d4: np.ndarray
    slope_d2: float
    slope_d4: float

    def rows(self):
        return [
            {
                "n": float(n),
                "int_d2": float(a),
                "sup_d4": float(b),
            }
            for n, a, b in zip(self.levels, self.int_d2, self.sup_d4)
        ]


def _loglog_slope(levels, values):
    mask = values > 0.0
    if np.count_nonzero(mask) < 2:
        return float("nan")
    return float(
        np.polyfit(np.log(levels[mask]), np.log(values[mask]), 1)[0]
    )


def penalty_decay_study(
    problem=None,
    bundle=None,
    levels=None,
    x0=None,
    basis=None,
    solutions=None,
):
    """Distance-moment decay across levels; reuses solutions when given."""
    if solutions is None:
        if problem is None or bundle is None or levels is None:
            raise ConfigError(
                "either precomputed solutions or (problem, bundle, levels)"
            )
        solutions = [
            solve_penalized(problem, bundle, n, x0=x0, basis=basis) for n in levels
        ]
    levels = np.array([s.n for s in solutions], dtype=float)
    if np.any(np.diff(levels) <= 0.0):
        raise ConfigError("levels must be strictly increasing", field="levels")
    int_d2 = np.array([s.diagnostics["int_d2"] for s in solutions])
    sup_d4 = np.array([s.diagnostics["sup_d4"] for s in solutions])
    return DecayStudy(
        levels=levels,
        int_d2=int_d2,
        sup_d4=sup_d4,
        slope_d2=_loglog_slope(levels, int_d2),
        slope_d4=_loglog_slope(levels, sup_d4),
    )


def mann_kendall_growth(values):
    """One-sided Mann-Kendall test against upward trend.

    Returns (statistic, z_score, p_value) where the p-value is the
    probability, under exchangeability, of a concordance statistic at least
    as large as observed. Small p rejects 'no growth'.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 3:
        raise ConfigError("trend test needs at least 3 values")
    s = 0
    for i in range(n - 1):
        s += int(np.sum(np.sign(values[i + 1 :] - values[i])))
    var = n * (n - 1) * (2 * n + 5) / 18.0
    if s > 0:
        z = (s - 1) / math.sqrt(var)
    elif s < 0:
        z = (s + 1) / math.sqrt(var)
    else:
        z = 0.0
    p = 0.5 * math.erfc(z / math.sqrt(2.0))
    return s, z, p


_MONITORED = ("sup_y2", "int_z2", "k_total_variation", "bound_var2")


@dataclass(frozen=True)
class EstimateReport:
    """A priori bound tracking across a ladder of penalized solutions.

    Boundedness in n is the assertion, so the growth test runs on the
    absolute level-to-level movement along the geometric schedule: a
    quantity escaping to infinity at any polynomial rate moves by
    geometrically growing amounts there, while one converging to its finite
    limit (from either side) moves by shrinking amounts. Raw-level p-values
    are reported too, for the record; monotone convergence toward the limit
    trips those by construction, which is not a boundedness failure.
    """

    levels: np.ndarray
    table: tuple
    escape_p: dict
    level_p: dict
    uniform_ratio_min: float
    uniform_ratio_max: float

    @property
    def trend_free(self):
        return {name: p > 0.05 for name, p in self.escape_p.items()}

    @property
    def all_trend_free(self):
        return bool(all(self.trend_free.values()))


def estimates_report(solutions):
    """Uniform-bound and force-variation evidence across levels.

    The left side sup E|Y|^2 + E int |Z|^2 must stay controlled by the data
    functional uniformly in n; the total variation of K and its square must
    stay bounded across the ladder. Each monitored quantity gets a one-sided
    growth test on its increments at 5 percent.
    """
    if len(solutions) < 5:
        raise ConfigError("estimates report needs at least 5 levels")
    levels = np.array([s.n for s in solutions], dtype=float)
    rows = []
    ratios = []
    for s in solutions:
        diag = s.diagnostics
        lhs = diag["sup_y2"] + diag["int_z2"]
        rhs = diag["data_functional"]
        ratio = lhs / rhs if rhs > 0.0 else float("inf")
        ratios.append(ratio)
        rows.append(
            {
                "n": s.n,
                "sup_y2": diag["sup_y2"],
                "int_z2": diag["int_z2"],
                "k_total_variation": diag["k_total_variation"],
                "bound_var2": diag["bound_var2"],
                "data_functional": rhs,
                "uniform_ratio": ratio,
            }
        )
    escape_p = {}
    level_p = {}
    for name in _MONITORED:
        series = np.array([r[name] for r in rows])
        _, _, escape_p[name] = mann_kendall_growth(np.abs(np.diff(series)))
        _, _, level_p[name] = mann_kendall_growth(series)
    return EstimateReport(
        levels=levels,
        table=tuple(rows),
        escape_p=escape_p,
        level_p=level_p,
        uniform_ratio_min=float(np.min(ratios)),
        uniform_ratio_max=float(np.max(ratios)),
    )
