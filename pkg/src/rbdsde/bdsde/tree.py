"""Exact dynamic programming oracle on a recombining lattice.

For scalar problems with constant coefficients, the forward noise is a
binomial walk and the backward noise takes values +-sqrt(dt) per step.
Backward induction computes the conditional mean and the slope proxy on
the lattice, applies the h term at the right endpoint and the generator
through its local fixed point, and projects fully onto the domain closure,
recording the displacement. The result is deterministic: no sampling.

With h present the value depends on the whole backward path, so the DP runs
once per sign pattern (2^depth of them, vectorized across patterns) and the
root values are averaged. Without h a single DP suffices.
"""

from __future__ import annotations

import numpy as np

from ..errors import ConfigError, ResourceError

_MAX_W_DEPTH = 14
_MAX_DEPTH = 4096
_FIXED_POINT_ITERS = 50
_FIXED_POINT_TOL = 1e-12


def _constant_scalar(fn, T, x0, label):
    """Probe a coefficient at several times and states; require constancy."""
    xs = np.array([[x0 - 1.7], [x0 - 0.3], [x0 + 0.4], [x0 + 2.1]])
    values = []
    for t in (0.0, 0.37 * T, 0.91 * T):
        out = np.asarray(fn(t, xs), dtype=float).reshape(-1)
        values.append(out)
    values = np.concatenate(values)
    if np.max(np.abs(values - values[0])) > 1e-12 * (1.0 + abs(values[0])):
        raise ConfigError(
            f"lattice oracle requires a constant coefficient; {label} varies"
        )
    return float(values[0])


def _project_1d(domain, values):
    flat = values.reshape(-1, 1)
    return domain._project(flat).reshape(values.shape)


def tree_oracle(problem, depth, x0=0.0):
    """Value at (t=0, x0) by exhaustive backward induction; returns a float.

    Only scalar problems (d = k = l = 1) with constant b and sigma are
    supported. depth is the number of time steps; with h present the cost
    is 2^depth DP passes, refused above depth 14.
    """
    if (problem.d, problem.k, problem.l) != (1, 1, 1):
        raise ConfigError("lattice oracle requires d = k = l = 1")
    depth = int(depth)
    if depth < 1:
        raise ConfigError("depth must be at least 1", field="depth")
    if depth > _MAX_DEPTH:
        raise ResourceError(f"lattice depth {depth} exceeds {_MAX_DEPTH}")
    if problem.h is not None and depth > _MAX_W_DEPTH:
        raise ResourceError(
            f"h requires enumerating 2^depth backward paths; "
            f"depth {depth} exceeds {_MAX_W_DEPTH}"
        )
    x0 = float(x0)
    b = _constant_scalar(problem.b, problem.T, x0, "b")
    sig = _constant_scalar(
        lambda t, x: np.asarray(problem.sigma(t, x), dtype=float).reshape(-1),
        problem.T,
        x0,
        "sigma",
    )

    dt = problem.T / depth
    sqdt = np.sqrt(dt)
    nodes = problem.T * np.arange(depth + 1) / depth

    def lattice(i):
        j = np.arange(i + 1)
        return x0 + b * nodes[i] + sig * sqdt * (2.0 * j - i)

    if problem.h is not None:
        n_w = 1 << depth
        # bit i of each row is the sign of the backward increment over step i
        bits = (np.arange(n_w)[:, None] >> np.arange(depth)[None, :]) & 1
        signs = (2.0 * bits - 1.0) * sqdt
    else:
        n_w = 1
        signs = np.zeros((1, depth))

    def call(fn, t, x, y, z):
        flat_x = x.reshape(-1, 1)
        out = fn(t, flat_x, y.reshape(-1, 1), z.reshape(-1, 1, 1))
        return np.asarray(out, dtype=float).reshape(x.shape)

    x_term = lattice(depth)
    y = np.broadcast_to(
        np.asarray(problem.Phi(x_term[:, None]), dtype=float).reshape(-1),
        (n_w, depth + 1),
    ).copy()
    phi_up = np.asarray(problem.Phi(x_term[:, None] + sig * sqdt), dtype=float)
    phi_dn = np.asarray(problem.Phi(x_term[:, None] - sig * sqdt), dtype=float)
    z = np.broadcast_to(
        ((phi_up - phi_dn) / (2.0 * sqdt)).reshape(-1), (n_w, depth + 1)
    ).copy()

    for i in range(depth - 1, -1, -1):
        x_next = lattice(i + 1)
        carry = y
        if problem.h is not None:
            x_rep = np.broadcast_to(x_next, y.shape)
            h_val = call(problem.h, nodes[i + 1], x_rep, y, z)
            carry = y + h_val * signs[:, i : i + 1]
        up = carry[:, 1:]
        dn = carry[:, :-1]
        m = 0.5 * (up + dn)
        z = (up - dn) / (2.0 * sqdt)
        x_here = lattice(i)
        if problem.f is not None:
            x_rep = np.broadcast_to(x_here, m.shape)
            y = _project_1d(problem.domain, m)
            for _ in range(_FIXED_POINT_ITERS):
                v = m + dt * call(problem.f, nodes[i], x_rep, y, z)
                y_new = _project_1d(problem.domain, v)
                if np.max(np.abs(y_new - y)) < _FIXED_POINT_TOL:
                    y = y_new
                    break
                y = y_new
        else:
            y = _project_1d(problem.domain, m)

    return float(np.mean(y[:, 0]))
