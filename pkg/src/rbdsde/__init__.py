"""Numerical laboratory for reflected backward doubly stochastic equations.

Subpackages
-----------
geometry
    Convex domains, projections, resolvent steps, mollified approximations.
stochastics
    Time grids, two-sided noise bundles, forward and inverse flows.
regression
    Conditional expectation estimators on simulated clouds.
bdsde
    Penalized backward solvers, a binomial tree oracle, solution checks.
spde
    Weighted norms, field evaluation, boundary measure, weak-form residuals.
cli
    Configuration-driven command line entry points.
"""

__version__ = "0.1.0"

from . import bdsde, geometry, regression, spde, stochastics  # noqa: F401
