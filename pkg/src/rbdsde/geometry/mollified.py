"""Smooth approximations of a convex domain by mollified sublevel sets.

The distance function h(x) = d(x, D) is convolved with a compactly supported
bump g_delta by tensor-product Gauss-Legendre quadrature; the approximating
domain is the sublevel set {x : (g_delta * h)(x) < eta}. Since h is
1-Lipschitz, |g_delta * h - h| <= delta, which gives the constructive
Hausdorff bound epsilon = delta + eta reported by :func:`mollify`.

The mollified function stays convex (a positive combination of shifted
distance functions). Each shifted distance d is regularized to
sqrt(d^2 + s^2) - s with a tiny s so the combination is C^1 with an exact
analytic gradient; the regularization lowers each term by at most s, which
is folded into the reported bound. Projection onto the sublevel set runs a
KKT Newton iteration on that exact gradient and falls back to Haugazeau's
outer-halfspace scheme, which converges to the true projection for any
closed convex set.
"""

from __future__ import annotations

import numpy as np

from ..errors import DomainError, IterationLimitError, QuadratureError
from .domains import ConvexDomain

_GL_ORDER = 8
_FD_HESS = 1e-6
_NEWTON_MAX = 60
_CUT_MAX = 3000
_GAMMA_SEED = 77130521


class MollifiedDomain(ConvexDomain):
    """Sublevel set {x : h_delta(x) < eta} of the mollified distance function.

    Parameters
    ----------
    base : ConvexDomain
        Domain whose distance function is mollified.
    delta : float
        Support radius of the bump kernel.
    eta : float
        Sublevel threshold; must exceed h_delta at the interior point.
    """

    kind = "mollified"

    def __init__(self, base, delta, eta):
        if delta <= 0.0 or eta <= 0.0:
            raise DomainError("mollification needs delta > 0 and eta > 0")
        self.base = base
        self.delta = float(delta)
        self.eta = float(eta)
        self._build_quadrature()
        a = base.interior_point
        h_a = float(self._h(a[None, :])[0])
        if h_a >= eta:
            raise DomainError(
                f"interior point of the base domain is not interior to the "
                f"sublevel set (h_delta(a) = {h_a:.3e} >= eta = {eta:.3e}); "
                f"decrease delta or increase eta"
            )
        super().__init__(base.dim, a, 1.0)  # placeholder, certified just below
        self.gamma = self._certify_gamma(a)
        self._validate()

    # -- quadrature mollifier ----------------------------------------------
    def _build_quadrature(self):
        nodes, weights = np.polynomial.legendre.leggauss(_GL_ORDER)
        axes_n = [self.delta * nodes] * self.base.dim
        axes_w = [self.delta * weights] * self.base.dim
        grids = np.meshgrid(*axes_n, indexing="ij")
        z = np.stack([g.ravel() for g in grids], axis=1)
        w = np.ones(z.shape[0])
        for gw in np.meshgrid(*axes_w, indexing="ij"):
            w = w * gw.ravel()
        r2 = np.sum((z / self.delta) ** 2, axis=1)
        bump = np.zeros_like(r2)
        inside = r2 < 1.0
        bump[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
        w = w * bump
        keep = w > 0.0
        z, w = z[keep], w[keep]
        total = float(np.sum(w))
        if not np.isfinite(total) or total <= 0.0:
            raise QuadratureError("mollifier quadrature weights are degenerate")
        # discrete normalization makes h_delta reproduce constants exactly
        self._nodes = z
        self._weights = w / total
        # large enough that the curvature stays bounded by ~4/eta near the
        # level set; the shift is folded into the reported epsilon
        self._smooth = 0.25 * min(self.delta, self.eta)

    def _h_grad(self, x):
        """Regularized mollified distance and its exact gradient at rows of x.

        Each shifted distance enters as sqrt(d_q^2 + s^2) - s, whose gradient
        d_q / sqrt(d_q^2 + s^2) * (x - z_q - pi(x - z_q)) / d_q vanishes
        continuously at d_q = 0, so the weighted sum is C^1 everywhere.
        """
        x = np.asarray(x, dtype=float)
        s = self._smooth
        nq = self._nodes.shape[0]
        shifted = x[:, None, :] - self._nodes[None, :, :]
        flat = shifted.reshape(-1, self.base.dim)
        offset = flat - self.base._project(flat)
        d = np.linalg.norm(offset, axis=1)
        root = np.sqrt(d**2 + s**2)
        q = root - s
        factor = np.where(d > 0.0, 1.0 / root, 0.0)
        slope = offset * factor[:, None]
        q = q.reshape(x.shape[0], nq)
        slope = slope.reshape(x.shape[0], nq, self.base.dim)
        h = q @ self._weights
        grad = np.einsum("bqk,q->bk", slope, self._weights)
        return h, grad

    def _h(self, x):
        x = np.asarray(x, dtype=float)
        s = self._smooth
        shifted = x[:, None, :] - self._nodes[None, :, :]
        flat = shifted.reshape(-1, self.base.dim)
        d = np.linalg.norm(flat - self.base._project(flat), axis=1)
        q = np.sqrt(d**2 + s**2) - s
        return q.reshape(x.shape[0], -1) @ self._weights

    # -- construction helpers ------------------------------------------------
    def _certify_gamma(self, a):
        rng = np.random.default_rng(_GAMMA_SEED)
        x = a + 3.0 * self.base.scale * rng.standard_normal((2048, self.dim))
        p = self._project_raw(x)
        offset = x - p
        dist = np.linalg.norm(offset, axis=1)
        mask = dist > 1e-9 * self.base.scale
        if not np.any(mask):
            return 0.9 * self.base.gamma
        ratio = np.einsum("ij,ij->i", (x - a)[mask], offset[mask]) / dist[mask]
        gamma = 0.95 * float(np.min(ratio))
        if gamma <= 0.0:
            raise DomainError("could not certify a positive gamma after mollification")
        return gamma

    @property
    def epsilon(self):
        """Constructive Hausdorff-type bound for the approximation.

        delta from the mollification, eta from the sublevel threshold, plus
        the distance-regularization shift s.
        """
        return self.delta + self.eta + self._smooth

    def approximation_gap(self, rng, n=2048):
        """Measured suprema (d(x, D_eps) over x in D, d(x, D) over x in D_eps)."""
        xs = self.base.sample_closure(rng, n)
        h = self._h(xs)
        out = h >= self.eta
        sup_in = 0.0
        if np.any(out):
            p = self._project_raw(xs[out])
            sup_in = float(np.max(np.linalg.norm(xs[out] - p, axis=1)))
        ys = self.sample_closure(rng, n)
        d_back = np.linalg.norm(ys - self.base._project(ys), axis=1)
        return sup_in, float(np.max(d_back))

    # -- domain primitives ----------------------------------------------------
    def sample_closure(self, rng, n):
        # rejection sampling avoids one Newton projection per sample
        out = np.empty((0, self.dim))
        spread = 3.0
        for _ in range(64):
            cand = self.interior_point + spread * self.base.scale * (
                rng.standard_normal((2 * n, self.dim))
            )
            keep = cand[self._h(cand) <= self.eta]
            out = np.concatenate([out, keep], axis=0)
            if out.shape[0] >= n:
                return out[:n]
            spread *= 0.7
        # degenerate fallback: the interior point is always a member
        pad = np.repeat(self.interior_point[None, :], n - out.shape[0], axis=0)
        return np.concatenate([out, pad], axis=0)

    def boundary_distance(self, x):
        # h_delta is 1-Lipschitz, so |h - eta| underestimates the true distance
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        return np.abs(self.eta - self._h(x))

    @property
    def scale(self):
        return self.base.scale

    def params(self):
        return {"base": self.base.to_dict(), "delta": self.delta, "eta": self.eta}

    # -- projection -----------------------------------------------------------
    def _project(self, x):
        return self._project_raw(np.asarray(x, dtype=float))

    def _project_raw(self, x):
        y = x.copy()
        h = self._h(x)
        out = h >= self.eta
        if not np.any(out):
            return y
        y[out] = self._project_outside(x[out])
        return y

    def _project_outside(self, x):
        """KKT Newton on min |y - x| s.t. h_delta(y) = eta, then a cut fallback."""
        b = x.shape[0]
        a = self.interior_point
        # coarse bisection along [a, x] brackets the boundary crossing; the
        # Newton iteration below polishes it
        lo = np.zeros(b)
        hi = np.ones(b)
        for _ in range(24):
            mid = 0.5 * (lo + hi)
            pts = a + mid[:, None] * (x - a)
            below = self._h(pts) < self.eta
            lo = np.where(below, mid, lo)
            hi = np.where(below, hi, mid)
        y = a + (0.5 * (lo + hi))[:, None] * (x - a)

        hy, grad = self._h_grad(y)
        gnorm = np.maximum(np.linalg.norm(grad, axis=1), 1e-12)
        mu = np.linalg.norm(x - y, axis=1) / gnorm
        tol = 1e-12 * (1.0 + np.linalg.norm(x, axis=1))

        f1 = y - x + mu[:, None] * grad
        f2 = hy - self.eta
        fn = np.sqrt(np.sum(f1**2, axis=1) + f2**2)
        k = self.dim
        lm = np.zeros(b)  # per-row damping, raised when a row stops improving
        for _ in range(_NEWTON_MAX):
            active = fn > tol
            if not np.any(active):
                break
            ya, mua, f1a, f2a, ga = y[active], mu[active], f1[active], f2[active], grad[active]
            hess = np.empty((ya.shape[0], k, k))
            for j in range(k):
                e = np.zeros(k)
                e[j] = _FD_HESS
                hess[:, :, j] = (self._h_grad(ya + e)[1] - self._h_grad(ya - e)[1]) / (
                    2.0 * _FD_HESS
                )
            hess = 0.5 * (hess + np.transpose(hess, (0, 2, 1)))
            jac = np.zeros((ya.shape[0], k + 1, k + 1))
            jac[:, :k, :k] = np.eye(k) + mua[:, None, None] * hess
            jac[:, :k, k] = ga
            jac[:, k, :k] = ga
            # the KKT Jacobian is symmetric indefinite, so damping must act on
            # the least-squares form: step = -(J^T J + lm I)^-1 J^T F, which is
            # the Newton step at lm = 0 and a residual-descent step for lm large
            fvec = np.concatenate([f1a, f2a[:, None]], axis=1)[:, :, None]
            jtj = np.matmul(np.transpose(jac, (0, 2, 1)), jac)
            jtj += np.maximum(lm[active], 1e-14)[:, None, None] * np.eye(k + 1)
            jtf = np.matmul(np.transpose(jac, (0, 2, 1)), fvec)
            try:
                step = -np.linalg.solve(jtj, jtf)[:, :, 0]
            except np.linalg.LinAlgError:
                jtj += 1e-10 * np.eye(k + 1)
                step = -np.linalg.solve(jtj, jtf)[:, :, 0]
            # row-wise backtracking on the KKT residual
            xa = x[active]
            scale = np.ones(ya.shape[0])
            best_y, best_mu = ya.copy(), mua.copy()
            best_grad = ga.copy()
            best_f1, best_f2 = f1a.copy(), f2a.copy()
            best_f = fn[active].copy()
            improved = np.zeros(ya.shape[0], dtype=bool)
            for _try in range(4):
                cand_y = ya + scale[:, None] * step[:, :k]
                cand_mu = np.maximum(mua + scale * step[:, k], 0.0)
                cand_h, cand_grad = self._h_grad(cand_y)
                c1 = cand_y - xa + cand_mu[:, None] * cand_grad
                c2 = cand_h - self.eta
                cf = np.sqrt(np.sum(c1**2, axis=1) + c2**2)
                better = cf < best_f
                best_f[better] = cf[better]
                best_y[better] = cand_y[better]
                best_mu[better] = cand_mu[better]
                best_grad[better] = cand_grad[better]
                best_f1[better] = c1[better]
                best_f2[better] = c2[better]
                improved |= better
                if np.all(improved):
                    break
                scale = np.where(improved, scale, scale * 0.5)
            y[active], mu[active] = best_y, best_mu
            grad[active] = best_grad
            f1[active], f2[active], fn[active] = best_f1, best_f2, best_f
            bump = np.zeros(b, dtype=bool)
            bump[active] = ~improved
            lm = np.where(bump, np.minimum(np.maximum(lm * 8.0, 1e-8), 1e8), lm * 0.25)

        hard = 1e-9 * (1.0 + np.linalg.norm(x, axis=1))
        stuck = fn > hard
        if np.any(stuck):
            y[stuck] = self._project_cuts(x[stuck], y[stuck])
            hs, gs = self._h_grad(y[stuck])
            f1s = y[stuck] - x[stuck] + (
                np.linalg.norm(x[stuck] - y[stuck], axis=1)
                / np.maximum(np.linalg.norm(gs, axis=1), 1e-12)
            )[:, None] * gs
            fns = np.sqrt(np.sum(f1s**2, axis=1) + (hs - self.eta) ** 2)
            if np.any(fns > hard[stuck]):
                raise IterationLimitError(
                    f"mollified projection stalled on "
                    f"{int(np.sum(fns > hard[stuck]))} points "
                    f"(worst residual {float(np.max(fns)):.3e})",
                    residual=float(np.max(fns)),
                )
        return y

    def _project_cuts(self, x, y0):
        """Haugazeau iteration: project x onto {h <= eta} via outer halfspaces.

        Each step projects y onto the supporting halfspace of the sublevel
        set cut at y (valid since h_delta is convex), then combines it with
        the anchor x so the iterates converge to the true projection.
        """
        y = y0.copy()
        for _ in range(_CUT_MAX):
            hy, g = self._h_grad(y)
            viol = hy - self.eta
            active = viol > 1e-14 * (1.0 + np.abs(self.eta))
            gn2 = np.maximum(np.sum(g**2, axis=1), 1e-24)
            p = y - (np.maximum(viol, 0.0) / gn2)[:, None] * g
            y_new = _haugazeau_combine(x, y, p)
            moved = np.linalg.norm(y_new - y, axis=1)
            y = y_new
            if not np.any(active) or np.max(moved) <= 1e-14 * (
                1.0 + np.max(np.linalg.norm(x, axis=1))
            ):
                break
        return y


def _haugazeau_combine(a, b, c):
    """Projection of a onto H(a,b) cap H(b,c), the Haugazeau update.

    H(u,v) = {w : (u - v) . (w - v) <= 0}. Closed-form three-case formula;
    in exact arithmetic the intersection is nonempty whenever both
    halfspaces contain the target set.
    """
    ab = a - b
    cb = c - b
    pi = np.einsum("ij,ij->i", ab, b - c)
    mu = np.sum(ab**2, axis=1)
    nu = np.sum(cb**2, axis=1)
    rho = mu * nu - pi**2
    out = np.where((nu <= 0.0)[:, None], b, c)  # degenerate: cut did not move b
    case2 = (rho > 0.0) & (pi * nu >= rho)
    case3 = (rho > 0.0) & (pi * nu < rho)
    if np.any(case2):
        out[case2] = a[case2] + (1.0 + pi[case2] / nu[case2])[:, None] * cb[case2]
    if np.any(case3):
        w = (nu[case3] / rho[case3])[:, None]
        out[case3] = b[case3] + w * (
            pi[case3][:, None] * ab[case3] + mu[case3][:, None] * cb[case3]
        )
    return out


def mollify(domain, delta, eta):
    """Mollified approximation of ``domain`` with reported bound delta + eta.

    Returns a :class:`MollifiedDomain` whose ``epsilon`` attribute carries the
    constructive Hausdorff-type bound: every point of the base domain is
    within epsilon of the sublevel set and conversely.
    """
    return MollifiedDomain(domain, delta, eta)
