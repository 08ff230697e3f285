"""Variational-identity residual for the estimated pair (field, measure).

The time-derivative pairing is assembled in discrete-duality form: the
field at the right endpoint of each step multiplies the test-function
increment over that step, so the sum telescopes against the backward
recursion that produced the field and the terminal sheet enters as exact
data. The analytic time derivative supplies the increment at the step
midpoint, which matches the exact difference to third order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import ConfigError, QuadratureError


@dataclass(frozen=True)
class WeakTestFunction:
    """Smooth compactly supported test function with analytic derivatives.

    All three callables are vectorized as fn(s, x) -> (A,) for an (A,) time
    array and (A, d) positions. lstar_phi must be the adjoint-generator
    image of phi for the problem's coefficients; it is the caller's claim,
    not something this module can verify. The support interval bounds the
    spatial support for quadrature-coverage checks.
    """

    phi: Callable
    dphi_ds: Callable
    lstar_phi: Callable
    support_lower: float
    support_upper: float
    name: str = "phi"


@dataclass(frozen=True)
class WeakFormReport:
    """Signed residual of the variational identity, with and without nu."""

    test_name: str
    residual: np.ndarray
    se: np.ndarray
    residual_without_nu: np.ndarray
    se_without_nu: np.ndarray
    nu_term: np.ndarray
    nu_se: np.ndarray
    terms: dict

    def within(self, k_sigma=3.0):
        return bool(np.all(np.abs(self.residual) <= k_sigma * self.se))

    def rows(self):
        out = []
        for c in range(self.residual.size):
            out.append(
                {
                    "test": self.test_name,
                    "component": c,
                    "residual": float(self.residual[c]),
                    "std_error": float(self.se[c]),
                    "residual_without_nu": float(self.residual_without_nu[c]),
                    "nu_term": float(self.nu_term[c]),
                }
            )
        return out


def weak_form_residual(field, measure, test):
    """Assemble every term of the variational identity and return the gap.

    Space quadrature is the midpoint rule on the field's own grid; time
    pairing is the discrete-duality form described in the module docstring.
    The propagated standard error combines the field's replicate errors
    (through the linear terms) with the measure's start-sample spread; the
    generator term f is treated as exact given the field, which is correct
    to first order.
    """
    problem = field.problem
    if field.grid.shape[1] != 1:
        raise ConfigError("weak-form assembly supports d = 1 only")
    if measure.problem is not problem:
        raise ConfigError("field and measure were built for different problems")
    if abs(measure.t - field.t) > 1e-12 * (1.0 + abs(field.t)):
        raise ConfigError("field and measure evaluation times differ")
    x = field.grid[:, 0]
    if x.size < 2:
        raise ConfigError("field grid too small for quadrature")
    h = float(x[1] - x[0])
    if np.max(np.abs(np.diff(x) - h)) > 1e-9 * (1.0 + h):
        raise ConfigError("field grid must be uniformly spaced")
    cover_lo, cover_hi = x[0] - 0.5 * h, x[-1] + 0.5 * h
    sup_lo = float(np.asarray(test.support_lower).reshape(-1)[0])
    sup_hi = float(np.asarray(test.support_upper).reshape(-1)[0])
    if sup_lo < cover_lo or sup_hi > cover_hi:
        raise QuadratureError(
            f"test support [{sup_lo}, {sup_hi}] is not covered by the field "
            f"grid [{cover_lo:.4g}, {cover_hi:.4g}]"
        )
    width = sup_hi - sup_lo
    if width < 8.0 * h:
        raise QuadratureError(
            f"field grid spacing {h:.4g} is too coarse for a test function "
            f"of support width {width:.4g}; need at least 8 cells across it"
        )

    times = field.times
    n_steps = times.size - 1
    dt = np.diff(times)
    grid = field.grid
    G = grid.shape[0]
    k = field.values.shape[2]
    u = field.values
    z = field.gradient

    def at(fn, s):
        return np.asarray(fn(np.full(G, s), grid), dtype=float)

    # Flat weights are deliberate: every integrand here vanishes with all
    # derivatives at the grid edges (the support check guarantees it), so
    # the trapezoid boundary corrections drop out and the flat rule
    # super-converges; higher-order alternating weights only alias the
    # second-derivative factors.
    w = np.full(G, h)

    phi_0 = at(test.phi, times[0])
    phi_T = at(test.phi, times[-1])
    coef = np.zeros((times.size, G))
    coef[0] = w * phi_0
    coef[-1] -= w * phi_T

    a_term = np.zeros(k)
    c_term = np.zeros(k)
    f_term = np.zeros(k)
    h_term = np.zeros(k)
    for i in range(n_steps):
        dphi = at(test.dphi_ds, 0.5 * (times[i] + times[i + 1]))
        lstar = at(test.lstar_phi, times[i])
        a_term += dt[i] * ((w * dphi) @ u[i + 1])
        c_term += dt[i] * ((w * lstar) @ u[i + 1])
        coef[i + 1] += w * dt[i] * (dphi - lstar)
        if problem.f is not None:
            fv = np.asarray(problem.f(times[i], grid, u[i], z[i]), dtype=float)
            f_term += dt[i] * ((w * at(test.phi, times[i])) @ fv)
        if problem.h is not None:
            if field.dW.shape[0] != 1:
                raise ConfigError(
                    "weak-form h term needs a single backward path in the field"
                )
            hv = np.asarray(
                problem.h(times[i + 1], grid, u[i + 1], z[i + 1]), dtype=float
            )
            sheet = np.einsum("g,gkl->kl", w * at(test.phi, times[i + 1]), hv)
            h_term += sheet @ field.dW[0, i]

    b_term = (w * phi_0) @ u[0] - (w * phi_T) @ u[-1]
    nu_term, nu_se = measure.integrate(test.phi)

    var_field = np.einsum("ig,igc->c", coef**2, field.se**2)
    se_without = np.sqrt(var_field)
    se_with = np.sqrt(var_field + nu_se**2)
    residual = a_term + b_term - c_term - f_term - h_term - nu_term
    return WeakFormReport(
        test_name=test.name,
        residual=residual,
        se=se_with,
        residual_without_nu=residual + nu_term,
        se_without_nu=se_without,
        nu_term=nu_term,
        nu_se=nu_se,
        terms={
            "time": a_term,
            "boundary": b_term,
            "generator": c_term,
            "f": f_term,
            "h": h_term,
            "nu": nu_term,
        },
    )
