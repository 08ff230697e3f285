"""Euler simulation of the forward state flow and its pathwise inverse.

The forward map X_{t,s}(x) solves dX = b(X) dr + sigma(X) dB_r from x. Its
variational (tangent) system is integrated alongside to track the Jacobian
determinant, which stays positive for fine enough steps and whose reciprocal
is the Jacobian of the inverse map. The inverse flow runs the same
increments in reverse with the corrected drift

    bhat_k = b_k - sum_{i,j} (d sigma_kj / d x_i) sigma_ij

and right-endpoint evaluation of the backward integral.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DivergenceError, PositivityError

_FD_STEP = 1e-5


def _jac_b(problem, t, x):
    db = getattr(problem, "db", None)
    if db is not None:
        return np.asarray(db(t, x), dtype=float)
    d = x.shape[1]
    out = np.empty((x.shape[0], d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = _FD_STEP
        out[:, :, i] = (
            np.asarray(problem.b(t, x + e)) - np.asarray(problem.b(t, x - e))
        ) / (2 * _FD_STEP)
    return out


def _jac_sigma(problem, t, x):
    dsigma = getattr(problem, "dsigma", None)
    if dsigma is not None:
        return np.asarray(dsigma(t, x), dtype=float)
    d = x.shape[1]
    out = np.empty((x.shape[0], d, d, d))
    for i in range(d):
        e = np.zeros(d)
        e[i] = _FD_STEP
        out[:, :, :, i] = (
            np.asarray(problem.sigma(t, x + e)) - np.asarray(problem.sigma(t, x - e))
        ) / (2 * _FD_STEP)
    return out


@dataclass(frozen=True)
class FlowEnsemble:
    """Simulated forward paths with variational determinants.

    Attributes
    ----------
    start_points : ndarray, shape (M, d)
    states : ndarray, shape (M, n+1, d)
        states[:, 0] equals start_points.
    jacobians : ndarray, shape (M, n+1)
        Determinant of the variational flow; 1 at index 0.
    grid : TimeGrid
    offset : int
        Grid node index of column 0, so column c sits at nodes[offset + c].
    """

    start_points: np.ndarray
    states: np.ndarray
    jacobians: np.ndarray
    grid: object
    offset: int

    @property
    def m_paths(self):
        return self.states.shape[0]

    def times(self):
        return self.grid.nodes[self.offset : self.offset + self.states.shape[1]]


def forward_flow(problem, bundle, start_points, i_from=0, i_to=None):
    """Euler paths of the state equation over grid nodes [i_from, i_to].

    start_points may be a single d-vector (broadcast over paths) or one row
    per forward path. The variational linear system
    J_{i+1} = (I + grad b dt + sum_j grad sigma^{(j)} dB^j) J_i is advanced
    with the same increments and its determinant recorded per node.
    """
    grid = bundle.grid
    if i_to is None:
        i_to = grid.steps
    if not 0 <= i_from < i_to <= grid.steps:
        raise ValueError(f"bad node range [{i_from}, {i_to}]")
    dB = bundle.dB
    m, d = dB.shape[0], dB.shape[2]
    x = np.asarray(start_points, dtype=float)
    if x.ndim == 1:
        x = np.broadcast_to(x, (m, d)).copy()
    if x.shape != (m, d):
        raise ValueError(f"start points shape {x.shape} does not match (M, d)")
    dt = grid.dt
    nodes = grid.nodes
    n = i_to - i_from
    states = np.empty((m, n + 1, d))
    dets = np.empty((m, n + 1))
    states[:, 0] = x
    dets[:, 0] = 1.0
    jmat = np.broadcast_to(np.eye(d), (m, d, d)).copy()
    cur = x
    for c, i in enumerate(range(i_from, i_to)):
        t_i = nodes[i]
        drift = np.asarray(problem.b(t_i, cur), dtype=float)
        diff = np.asarray(problem.sigma(t_i, cur), dtype=float)
        inc = dB[:, i]
        nxt = cur + drift * dt + np.einsum("mkj,mj->mk", diff, inc)
        if not np.all(np.isfinite(nxt)):
            raise DivergenceError(
                f"state blew up at step {i} (t = {t_i:.6g})", step=i
            )
        gb = _jac_b(problem, t_i, cur)
        gs = _jac_sigma(problem, t_i, cur)
        amp = np.eye(d) + gb * dt + np.einsum("mkji,mj->mki", gs, inc)
        jmat = np.matmul(amp, jmat)
        cur = nxt
        states[:, c + 1] = cur
        dets[:, c + 1] = np.linalg.det(jmat)
    return FlowEnsemble(
        start_points=x, states=states, jacobians=dets, grid=grid, offset=i_from
    )


def backward_drift(problem, t, x):
    """bhat = b - sum_{i,j} (d sigma^j / d x_i) sigma^{ij} at rows of x."""
    b = np.asarray(problem.b(t, x), dtype=float)
    gs = _jac_sigma(problem, t, x)
    sig = np.asarray(problem.sigma(t, x), dtype=float)
    return b - np.einsum("mkji,mij->mk", gs, sig)


def inverse_flow(problem, bundle, y, i_from, i_to=0):
    """Pathwise numerical inverse X^{-1} run from node i_from down to i_to.

    y is the point (or one point per path) whose preimage under the forward
    map over [tau_{i_to}, tau_{i_from}] is wanted. The same increments as the
    forward pass enter in reverse, with integrands evaluated at the right
    endpoint as befits the backward integral. Returns an (M, d) array.
    """
    grid = bundle.grid
    if not 0 <= i_to < i_from <= grid.steps:
        raise ValueError(f"bad node range [{i_to}, {i_from}]")
    dB = bundle.dB
    m, d = dB.shape[0], dB.shape[2]
    cur = np.asarray(y, dtype=float)
    if cur.ndim == 1:
        cur = np.broadcast_to(cur, (m, d)).copy()
    else:
        cur = cur.copy()
    dt = grid.dt
    nodes = grid.nodes
    for i in range(i_from - 1, i_to - 1, -1):
        t_right = nodes[i + 1]
        bh = backward_drift(problem, t_right, cur)
        diff = np.asarray(problem.sigma(t_right, cur), dtype=float)
        cur = cur - bh * dt - np.einsum("mkj,mj->mk", diff, dB[:, i])
        if not np.all(np.isfinite(cur)):
            raise DivergenceError(
                f"inverse flow blew up at step {i} (t = {nodes[i]:.6g})", step=i
            )
    return cur


def jacobian_det_inverse(ensemble, path_index, step_index):
    """Jacobian determinant of the inverse map at one path and node.

    The change-of-variables identity gives it as the reciprocal of the
    forward variational determinant; a nonpositive forward value signals a
    step size too coarse for the variational system.
    """
    det = float(ensemble.jacobians[path_index, step_index])
    if det <= 0.0:
        raise PositivityError(
            f"forward Jacobian determinant {det:.3e} at path {path_index}, "
            f"step {step_index} is not positive; refine the time step"
        )
    return 1.0 / det


def inverse_jacobians(ensemble):
    """Reciprocal determinants for all paths and nodes at once."""
    dets = ensemble.jacobians
    if np.any(dets <= 0.0):
        bad = np.argwhere(dets <= 0.0)[0]
        raise PositivityError(
            f"forward Jacobian determinant not positive at path {bad[0]}, "
            f"step {bad[1]}; refine the time step"
        )
    return 1.0 / dets
