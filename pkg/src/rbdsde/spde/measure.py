"""Boundary-measure estimation through the reflection force.

The measure pairs a start-point integral with pathwise K increments: the
right estimator accumulates psi at the path position against dK for starts
sampled over the support box, and the left estimator re-expresses the same
mass through the numerical inverse flow and the reciprocal variational
determinant. Agreement of the two sides is the representation check; the
atoms themselves (position, time, Jacobian-corrected mass) are kept so that
downstream quadratures can integrate test functions against the measure.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from ..bdsde import solve_penalized
from ..errors import ConfigError
from ..regression import LocalBasis
from ..stochastics import TimeGrid, inverse_flow, sample_noise
from ..stochastics.flows import inverse_jacobians
from ..stochastics.noise import substream
from .norms import WeightedNorm


@dataclass(frozen=True)
class TestPair:
    """Bounded nonnegative pair (phi, psi) for the two-sided pairing.

    Both callables are vectorized as fn(s, x) -> (A,) with s an (A,) array
    of times and x an (A, d) array of positions; phi is evaluated at start
    points on the right side and at inverted positions on the left, psi at
    the path position on both.
    """

    phi: Callable
    psi: Callable
    name: str = "pair"


@dataclass(frozen=True)
class MeasureConfig:
    """Sampling box, penalization level, and budget for measure estimation.

    basis None selects a local partition fit. Global polynomials leave a
    one-signed mass inflation here: any fit wiggle near the constraint kink
    is rectified by the projection, so smooth-basis error never averages
    out. A piecewise fit keeps that error at the cell scale.
    """

    box_lower: tuple
    box_upper: tuple
    n: float = 256
    steps: int = 64
    m_samples: int = 4000
    n_w_paths: int = 1
    t: float = 0.0
    seed: int = 0
    epsilon_int: Optional[float] = None
    basis: Optional[object] = None
    picard_sweeps: Optional[int] = None


@dataclass(frozen=True)
class MeasureEstimate:
    """Two-sided pairing values plus the raw measure atoms.

    left and right are (n_pairs, k) with matching standard errors. Atom
    arrays share one leading axis: masses carry the Jacobian correction and
    the importance weight, so integrate() is a plain weighted sum. The
    support statistic is the K-mass fraction charged strictly inside the
    constraint set at depth above epsilon_int, with a half/double
    sensitivity table; mass applied while the value is outside counts as
    boundary mass, since that is where the resolvent works.
    """

    problem: object
    t: float
    n: float
    box_lower: np.ndarray
    box_upper: np.ndarray
    volume: float
    pair_names: tuple
    left: np.ndarray
    right: np.ndarray
    left_se: np.ndarray
    right_se: np.ndarray
    support_violation: float
    epsilon_int: float
    epsilon_sensitivity: dict
    weighted_mass: np.ndarray
    total_variation: float
    n_samples: int
    atom_times: np.ndarray
    atom_nodes: np.ndarray
    atom_locations: np.ndarray
    atom_starts: np.ndarray
    atom_inverses: np.ndarray
    atom_forward_jac: np.ndarray
    atom_masses: np.ndarray
    atom_right_weights: np.ndarray = dc_field(repr=False, default=None)
    atom_samples: np.ndarray = dc_field(repr=False, default=None)

    def integrate(self, phi):
        """Integral of phi against the estimated measure, with its se.

        phi is vectorized as phi(s, x) -> (A,). Returns a pair of (k,)
        arrays: the value and the start-sample standard error.
        """
        k = self.left.shape[1]
        if self.atom_times.size == 0:
            return np.zeros(k), np.zeros(k)
        w = np.asarray(phi(self.atom_times, self.atom_locations), dtype=float)
        per_sample = np.zeros((self.n_samples, k))
        for c in range(k):
            per_sample[:, c] = np.bincount(
                self.atom_samples,
                weights=w * self.atom_masses[:, c],
                minlength=self.n_samples,
            )
        value = np.mean(per_sample, axis=0)
        se = np.std(per_sample, axis=0, ddof=1) / np.sqrt(self.n_samples)
        return value, se

    def rows(self):
        out = []
        for pi, name in enumerate(self.pair_names):
            for c in range(self.left.shape[1]):
                out.append(
                    {
                        "pair": name,
                        "component": c,
                        "left": float(self.left[pi, c]),
                        "left_se": float(self.left_se[pi, c]),
                        "right": float(self.right[pi, c]),
                        "right_se": float(self.right_se[pi, c]),
                    }
                )
        return out


def _sample_box(cfg, d, rng):
    lo = np.asarray(cfg.box_lower, dtype=float).reshape(d)
    hi = np.asarray(cfg.box_upper, dtype=float).reshape(d)
    if np.any(hi <= lo):
        raise ConfigError("sampling box must have positive extent per axis")
    u = rng.random((cfg.m_samples, d))
    return lo, hi, lo + u * (hi - lo)


def estimate_measure(problem, field, pairs, cfg):
    """Estimate the boundary measure and its two-sided pairing values.

    Start points are drawn uniformly on the config box (importance weight =
    box volume), one penalized solve supplies K mass, path positions, and
    variational determinants for every pair at once. When the problem has a
    backward-noise coefficient the field's W draw is reused so the measure
    and the field condition on the same realization.
    """
    if not pairs:
        raise ConfigError("at least one test pair is required")
    d, k, l = problem.d, problem.k, problem.l
    rng = substream(cfg.seed, "start", index=1)
    lo, hi, starts = _sample_box(cfg, d, rng)
    volume = float(np.prod(hi - lo))
    m = cfg.m_samples

    t = cfg.t
    if field is not None and abs(field.t - t) > 1e-12 * (1.0 + abs(t)):
        raise ConfigError(
            f"field evaluated at t = {field.t} but measure config has t = {t}"
        )
    grid_t = TimeGrid(t, problem.T, cfg.steps)
    noise_seed = int(substream(cfg.seed, "forward", index=7).integers(2**62))
    bundle = sample_noise(grid_t, d, l, m, cfg.n_w_paths, noise_seed)
    if problem.h is not None:
        if cfg.n_w_paths != 1:
            raise ConfigError("measure estimation needs n_w_paths = 1 when h is set")
        if field is not None:
            if field.dW.shape != bundle.dW.shape:
                raise ConfigError(
                    "field and measure time grids must match to share the W draw"
                )
            bundle = dataclasses.replace(bundle, dW=field.dW)

    basis = cfg.basis
    if basis is None:
        basis = LocalBasis(64, d)
    sol = solve_penalized(
        problem,
        bundle,
        cfg.n,
        start_points=starts,
        basis=basis,
        picard_sweeps=cfg.picard_sweeps,
    )
    dk = sol.dk_paths[0]
    y = sol.y_paths[0][:, :-1]
    states = sol.ensemble.states
    nodes = np.asarray(grid_t.nodes)
    n_steps = cfg.steps
    inv_jac = inverse_jacobians(sol.ensemble)

    # Support statistic on the full force field, before atom extraction.
    # Depth counts only strictly interior charging: the resolvent applies
    # force while the value sits just outside the constraint set, so points
    # the projection moves are treated as boundary mass, not violations.
    dk_norm = np.linalg.norm(dk, axis=2)
    total_mass = float(np.sum(dk_norm))
    flat_y = y.reshape(-1, k)
    outside = np.linalg.norm(flat_y - problem.domain._project(flat_y), axis=1)
    bd = problem.domain.boundary_distance(flat_y)
    bd = np.where(outside > 1e-12 * (1.0 + bd), 0.0, bd).reshape(m, n_steps)
    eps = cfg.epsilon_int
    if eps is None:
        eps = 0.05 * float(problem.domain.scale)
    sensitivity = {}
    for e in (0.5 * eps, eps, 2.0 * eps):
        if total_mass > 0.0:
            sensitivity[float(e)] = float(np.sum(dk_norm[bd > e]) / total_mass)
        else:
            sensitivity[float(e)] = 0.0
    violation = sensitivity[float(eps)]

    # pathwise inverses, node by node; node 0 inverts trivially
    inv_pos = np.empty((n_steps, m, d))
    inv_pos[0] = states[:, 0]
    for i in range(1, n_steps):
        inv_pos[i] = inverse_flow(problem, bundle, states[:, i], i_from=i, i_to=0)

    # The measure is the pushforward of the force along the flow: an atom at
    # (s, X_s(x)) weighs dK_s(x) times the forward variational determinant
    # times the importance weight. The paired left integrand carries the
    # inverse determinant, so across L the two cancel and any L-R gap is
    # inverse-flow error alone.
    fwd_jac = sol.ensemble.jacobians
    left_ps = np.zeros((len(pairs), m, k))
    right_ps = np.zeros((len(pairs), m, k))
    for i in range(n_steps):
        if not np.any(dk_norm[:, i]):
            continue
        s_row = np.full(m, nodes[i])
        mass_i = dk[:, i] * fwd_jac[:, i, None] * volume
        for pi, pair in enumerate(pairs):
            psi_here = np.asarray(pair.psi(s_row, states[:, i]), dtype=float)
            phi_start = np.asarray(pair.phi(s_row, starts), dtype=float)
            phi_inv = np.asarray(pair.phi(s_row, inv_pos[i]), dtype=float)
            right_ps[pi] += (phi_start * psi_here)[:, None] * dk[:, i] * volume
            left_ps[pi] += (phi_inv * inv_jac[:, i] * psi_here)[:, None] * mass_i
    left = np.mean(left_ps, axis=1)
    right = np.mean(right_ps, axis=1)
    left_se = np.std(left_ps, axis=1, ddof=1) / np.sqrt(m)
    right_se = np.std(right_ps, axis=1, ddof=1) / np.sqrt(m)

    path_idx, node_idx = np.nonzero(dk_norm)
    atom_masses = dk[path_idx, node_idx] * fwd_jac[path_idx, node_idx, None] * volume
    atom_locations = states[path_idx, node_idx]
    weight = WeightedNorm(d + 2, d).weight(atom_locations)
    weighted_mass = np.sum(weight[:, None] * np.abs(atom_masses), axis=0) / m

    return MeasureEstimate(
        problem=problem,
        t=float(t),
        n=float(cfg.n),
        box_lower=lo,
        box_upper=hi,
        volume=volume,
        pair_names=tuple(p.name for p in pairs),
        left=left,
        right=right,
        left_se=left_se,
        right_se=right_se,
        support_violation=violation,
        epsilon_int=float(eps),
        epsilon_sensitivity=sensitivity,
        weighted_mass=weighted_mass,
        total_variation=total_mass / m * volume,
        n_samples=m,
        atom_times=nodes[node_idx],
        atom_nodes=node_idx,
        atom_locations=atom_locations,
        atom_starts=starts[path_idx],
        atom_inverses=inv_pos[node_idx, path_idx],
        atom_forward_jac=fwd_jac[path_idx, node_idx],
        atom_masses=atom_masses,
        atom_right_weights=dk[path_idx, node_idx] * volume,
        atom_samples=path_idx,
    )
