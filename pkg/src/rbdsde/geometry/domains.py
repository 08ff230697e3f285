"""Closed convex domains with exact projections.

Every domain stores a designated interior point ``a`` and a constant
``gamma > 0`` such that (x - a)^T (x - pi(x)) >= gamma |x - pi(x)| for all x;
both are validated at construction. Operations are pure and accept arrays of
points with shape (..., dim).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..errors import DomainError, IterationLimitError

_CERTIFY_SAMPLES = 512
# outward cone test and prop3 certification both run on this fixed stream so
# construction is deterministic
_CERTIFY_SEED = 20240917


@dataclass(frozen=True)
class ProjectionResult:
    """Projection of one or many points onto a closed convex set.

    Attributes
    ----------
    point : ndarray, shape (..., dim)
        Nearest point of the closure.
    distance : ndarray or float, shape (...)
        Euclidean distance to the closure, |x - point|.
    inside : ndarray or bool, shape (...)
        True where the query point already belongs to the closure.
    """

    point: np.ndarray
    distance: np.ndarray
    inside: np.ndarray


class ConvexDomain:
    """Base class: a nonempty closed convex set in R^dim."""

    kind = "abstract"

    def __init__(self, dim, interior_point, gamma):
        self.dim = int(dim)
        self.interior_point = np.asarray(interior_point, dtype=float).reshape(self.dim)
        self.gamma = float(gamma)
        if not np.all(np.isfinite(self.interior_point)):
            raise DomainError("interior point must be finite")
        if self.gamma <= 0.0:
            raise DomainError("gamma must be positive")

    # -- primitives supplied by subclasses ---------------------------------
    def _project(self, x):
        """Project points with shape (B, dim) onto the closure."""
        raise NotImplementedError

    def boundary_distance(self, x):
        """Distance to the boundary (depth when inside, d(x, D) when outside)."""
        raise NotImplementedError

    @property
    def scale(self):
        """Characteristic length used to set relative tolerances."""
        raise NotImplementedError

    def params(self):
        """Kind-specific parameters for serialization."""
        raise NotImplementedError

    # -- shared behaviour ---------------------------------------------------
    def contains(self, x, tol=0.0):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, self.dim)
        d = np.linalg.norm(flat - self._project(flat), axis=1)
        return (d <= tol).reshape(x.shape[:-1])

    def sample_closure(self, rng, n):
        """n points of the closure: a Gaussian cloud around ``a`` projected in.

        The projection is exact for each kind, so the returned points always
        belong to the closure; the cloud scale follows the domain scale.
        """
        cloud = self.interior_point + 3.0 * self.scale * rng.standard_normal(
            (n, self.dim)
        )
        return self._project(cloud)

    def _validate(self):
        # the stored (a, gamma) pair must satisfy the interior-cone bound
        if self.boundary_distance(self.interior_point[None, :])[0] <= 0.0:
            raise DomainError(
                f"{self.kind}: designated point a is not strictly interior"
            )
        rng = np.random.default_rng(_CERTIFY_SEED)
        x = self.interior_point + 3.0 * self.scale * rng.standard_normal(
            (_CERTIFY_SAMPLES, self.dim)
        )
        p = self._project(x)
        offset = x - p
        dist = np.linalg.norm(offset, axis=1)
        lhs = np.einsum("ij,ij->i", x - self.interior_point, offset)
        slack = lhs - self.gamma * dist
        if np.min(slack) < -1e-9 * max(1.0, self.scale**2):
            raise DomainError(
                f"{self.kind}: stored (a, gamma) fail the interior-cone bound "
                f"(worst slack {np.min(slack):.3e})"
            )

    def to_dict(self):
        return {
            "kind": self.kind,
            "params": self.params(),
            "interior_point": self.interior_point.tolist(),
            "gamma": self.gamma,
        }


class Ball(ConvexDomain):
    """Closed Euclidean ball {x : |x - center| <= radius}."""

    kind = "ball"

    def __init__(self, center, radius, interior_point=None, gamma=None):
        center = np.asarray(center, dtype=float).ravel()
        radius = float(radius)
        if radius <= 0.0:
            raise DomainError("ball radius must be positive")
        self.center = center
        self.radius = radius
        if interior_point is None:
            interior_point = center
        if gamma is None:
            # with a at the center the cone bound holds with gamma = radius:
            # (x - c)^T (x - pi(x)) = (|x - c|) * |x - pi(x)| >= r |x - pi(x)|
            gamma = radius if np.allclose(interior_point, center) else None
        if gamma is None:
            gamma = radius - np.linalg.norm(
                np.asarray(interior_point, dtype=float) - center
            )
        super().__init__(center.size, interior_point, gamma)
        self._validate()

    def _project(self, x):
        rel = x - self.center
        norm = np.linalg.norm(rel, axis=1)
        out = norm > self.radius
        y = x.copy()
        if np.any(out):
            y[out] = self.center + rel[out] * (self.radius / norm[out])[:, None]
        return y

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.abs(self.radius - np.linalg.norm(x - self.center, axis=1))

    @property
    def scale(self):
        return self.radius

    def params(self):
        return {"center": self.center.tolist(), "radius": self.radius}


class Box(ConvexDomain):
    """Axis-aligned box {x : lower <= x <= upper} (componentwise)."""

    kind = "box"

    def __init__(self, lower, upper, interior_point=None, gamma=None):
        lower = np.asarray(lower, dtype=float).ravel()
        upper = np.asarray(upper, dtype=float).ravel()
        if lower.size != upper.size:
            raise DomainError("box bounds must have equal length")
        if np.any(upper <= lower):
            raise DomainError("box must have nonempty interior (lower < upper)")
        self.lower = lower
        self.upper = upper
        half = 0.5 * (upper - lower)
        if interior_point is None:
            interior_point = 0.5 * (lower + upper)
        if gamma is None:
            # active coordinates contribute at least the smallest half-width
            gamma = float(np.min(half))
        super().__init__(lower.size, interior_point, gamma)
        self._validate()

    def _project(self, x):
        return np.clip(x, self.lower, self.upper)

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        p = self._project(x)
        d_out = np.linalg.norm(x - p, axis=1)
        depth = np.minimum(x - self.lower, self.upper - x).min(axis=1)
        return np.where(d_out > 0.0, d_out, np.maximum(depth, 0.0))

    @property
    def scale(self):
        return float(np.max(self.upper - self.lower) * 0.5)

    def params(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


class HalfSpace(ConvexDomain):
    """Half-space {x : normal . x <= offset}; the normal is stored normalized."""

    kind = "half-space"

    def __init__(self, normal, offset, interior_point=None, gamma=None):
        normal = np.asarray(normal, dtype=float).ravel()
        nn = np.linalg.norm(normal)
        if nn == 0.0:
            raise DomainError("half-space normal must be nonzero")
        self.normal = normal / nn
        self.offset = float(offset) / nn
        if interior_point is None:
            # depth-one point along the inward normal
            interior_point = self.normal * (self.offset - 1.0)
            if gamma is None:
                gamma = 1.0
        if gamma is None:
            gamma = self.offset - float(
                self.normal @ np.asarray(interior_point, dtype=float).ravel()
            )
        super().__init__(normal.size, interior_point, gamma)
        self._validate()

    def _project(self, x):
        excess = x @ self.normal - self.offset
        return x - np.maximum(excess, 0.0)[:, None] * self.normal

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.abs(x @ self.normal - self.offset)

    @property
    def scale(self):
        return 1.0 + abs(self.offset)

    def params(self):
        return {"normal": self.normal.tolist(), "offset": self.offset}


class HalfSpaceIntersection(ConvexDomain):
    """Intersection of half-spaces, projected by Dykstra's alternating scheme.

    Parameters
    ----------
    normals : array_like, shape (m, dim)
    offsets : array_like, shape (m,)
        The set is {x : normals[j] . x <= offsets[j] for all j}.
    interior_point, gamma : optional
        When omitted, an approximate Chebyshev center is located by projected
        subgradient ascent on the minimum slack, and gamma is set to the
        certified slack at that point.
    """

    kind = "half-space-intersection"
    max_iterations = 500
    tolerance = 1e-10

    def __init__(self, normals, offsets, interior_point=None, gamma=None):
        normals = np.asarray(normals, dtype=float)
        offsets = np.asarray(offsets, dtype=float).ravel()
        if normals.ndim != 2 or normals.shape[0] != offsets.size:
            raise DomainError("need one offset per half-space normal")
        norms = np.linalg.norm(normals, axis=1)
        if np.any(norms == 0.0):
            raise DomainError("half-space normals must be nonzero")
        self.normals = normals / norms[:, None]
        self.offsets = offsets / norms
        if interior_point is None:
            interior_point, slack = self._chebyshev_center()
            if slack <= 1e-9:
                raise DomainError(
                    "half-space intersection has (numerically) empty interior"
                )
            if gamma is None:
                gamma = 0.999 * slack
        if gamma is None:
            a = np.asarray(interior_point, dtype=float).ravel()
            gamma = float(np.min(self.offsets - self.normals @ a))
        super().__init__(normals.shape[1], interior_point, gamma)
        self._validate()

    def _chebyshev_center(self):
        # projected subgradient ascent on a -> min_j (offset_j - n_j . a);
        # desk-scale replacement for the exact LP. The iterate is clamped to a
        # ball around the origin so unbounded intersections (where the slack
        # grows without limit) still yield a nearby interior point.
        a = np.zeros(self.normals.shape[1])
        best_a, best_slack = a.copy(), -np.inf
        step0 = 1.0 + float(np.max(np.abs(self.offsets)))
        radius = 4.0 * step0
        for it in range(2000):
            slacks = self.offsets - self.normals @ a
            j = int(np.argmin(slacks))
            if slacks[j] > best_slack:
                best_slack, best_a = float(slacks[j]), a.copy()
            a = a - (step0 / np.sqrt(it + 1.0)) * self.normals[j]
            an = np.linalg.norm(a)
            if an > radius:
                a *= radius / an
        return best_a, best_slack

    def _project(self, x):
        y = x.copy()
        m = self.normals.shape[0]
        corrections = np.zeros((m,) + x.shape)
        tol = self.tolerance * (1.0 + np.linalg.norm(x, axis=1))
        for _ in range(self.max_iterations):
            y_start = y.copy()
            for j in range(m):
                z = y + corrections[j]
                excess = np.maximum(z @ self.normals[j] - self.offsets[j], 0.0)
                y = z - excess[:, None] * self.normals[j]
                corrections[j] = z - y
            moved = np.linalg.norm(y - y_start, axis=1)
            if np.all(moved <= tol):
                return y
        raise IterationLimitError(
            f"Dykstra projection did not converge in {self.max_iterations} "
            f"cycles (max residual {float(np.max(moved)):.3e})",
            residual=float(np.max(moved)),
        )

    def boundary_distance(self, x):
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        p = self._project(x)
        d_out = np.linalg.norm(x - p, axis=1)
        depth = np.min(self.offsets - x @ self.normals.T, axis=1)
        return np.where(d_out > 0.0, d_out, np.maximum(depth, 0.0))

    @property
    def scale(self):
        return 1.0 + float(np.max(np.abs(self.offsets)))

    def params(self):
        return {
            "normals": self.normals.tolist(),
            "offsets": self.offsets.tolist(),
        }


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------


def _batched(domain, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != domain.dim:
        raise DomainError(
            f"point dimension {x.shape[-1]} does not match domain dim {domain.dim}"
        )
    if not np.all(np.isfinite(x)):
        raise DomainError("points must be finite")
    lead = x.shape[:-1]
    return x.reshape(-1, domain.dim), lead


def project(domain, x):
    """Project x (shape (..., dim)) onto the closure of the domain.

    Returns
    -------
    ProjectionResult
        point minimizing |x - y| over the closure, its distance, and an
        inside flag. Exact for ball/box/half-space; within the Dykstra
        residual tolerance for half-space intersections.
    """
    flat, lead = _batched(domain, x)
    p = domain._project(flat)
    d = np.linalg.norm(flat - p, axis=1)
    inside = ~(d > 0.0)
    point = p.reshape(lead + (domain.dim,))
    if lead == ():
        return ProjectionResult(point, float(d[0]), bool(inside[0]))
    return ProjectionResult(point, d.reshape(lead), inside.reshape(lead))


def distance(domain, x):
    """d(x, D) = |x - project(x)| for x of shape (..., dim)."""
    return project(domain, x).distance


def penalty_gradient(domain, x):
    """Gradient of the squared distance function, 2 (x - pi(x))."""
    flat, lead = _batched(domain, x)
    g = 2.0 * (flat - domain._project(flat))
    return g.reshape(lead + (domain.dim,))


def resolvent_step(domain, v, lam):
    """Semi-implicit penalty step: solve y + lam (y - pi(y)) = v.

    For v outside the closure the solution is y = (v + lam pi(v)) / (1 + lam),
    which lies on the segment [pi(v), v]; inside, y = v. Returns ``(y, dk)``
    with dk = -lam (y - pi(y)) = y - v, the penalty increment. Computed
    increment-first, dk = lam (pi(v) - v) / (1 + lam), so points the
    projection leaves fixed get dk = 0 and y = v bit-exactly.

    lam = 0 is accepted and returns (v, 0).
    """
    if lam < 0.0:
        raise DomainError("resolvent parameter lam must be nonnegative")
    flat, lead = _batched(domain, v)
    p = domain._project(flat)
    dk = lam * (p - flat) / (1.0 + lam)
    y = flat + dk
    y = y.reshape(lead + (domain.dim,))
    dk = dk.reshape(lead + (domain.dim,))
    return y, dk


def normal_at(domain, x, probe_offset=1e-4):
    """A representative outward unit normal at a boundary point.

    The point must lie within tol = 1e-6 (1 + |x|) of the boundary. The
    normal is the direction from the projection of a probe point nudged
    outward along the ray from the interior point a through x.
    """
    x = np.asarray(x, dtype=float).reshape(domain.dim)
    tol = 1e-6 * (1.0 + np.linalg.norm(x))
    bd = float(domain.boundary_distance(x[None, :])[0])
    if bd > tol:
        raise DomainError(
            f"normal_at requires a boundary point; distance to boundary {bd:.3e}"
        )
    ray = x - domain.interior_point
    ray_norm = np.linalg.norm(ray)
    if ray_norm == 0.0:
        raise DomainError("boundary point coincides with the interior point a")
    probe = x + probe_offset * ray / ray_norm
    res = project(domain, probe)
    direction = probe - res.point
    dn = np.linalg.norm(direction)
    if dn == 0.0:
        raise DomainError("probe point did not leave the domain; cannot orient")
    return direction / dn


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def domain_from_dict(data):
    """Build a domain from {"kind", "params", "interior_point", "gamma"}."""
    from .mollified import MollifiedDomain  # cycle: mollified builds on domains

    try:
        kind = data["kind"]
        params = data["params"]
    except (KeyError, TypeError) as exc:
        raise DomainError(f"malformed domain description: {exc}") from exc
    a = data.get("interior_point")
    gamma = data.get("gamma")
    if kind == "ball":
        return Ball(params["center"], params["radius"], a, gamma)
    if kind == "box":
        return Box(params["lower"], params["upper"], a, gamma)
    if kind == "half-space":
        return HalfSpace(params["normal"], params["offset"], a, gamma)
    if kind == "half-space-intersection":
        return HalfSpaceIntersection(params["normals"], params["offsets"], a, gamma)
    if kind == "mollified":
        base = domain_from_dict(params["base"])
        return MollifiedDomain(base, params["delta"], params["eta"])
    raise DomainError(f"unknown domain kind {kind!r}")


def domain_to_json(domain):
    return json.dumps(domain.to_dict(), sort_keys=True)


def domain_from_json(text):
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise DomainError(f"domain JSON does not parse: {exc}") from exc
    return domain_from_dict(data)
