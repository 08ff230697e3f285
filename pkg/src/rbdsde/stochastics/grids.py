"""Uniform time grids on [t0, T]."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError


@dataclass(frozen=True)
class TimeGrid:
    """Uniform partition t0 = tau_0 < ... < tau_N = T.

    Attributes
    ----------
    t0, T : float
        Interval endpoints, T > t0.
    steps : int
        Number of increments N >= 1.
    """

    t0: float
    T: float
    steps: int

    def __post_init__(self):
        if not self.T > self.t0:
            raise ConfigError("time grid needs T > t0", field="T")
        if self.steps < 1:
            raise ConfigError("time grid needs at least one step", field="steps")

    @property
    def dt(self):
        return (self.T - self.t0) / self.steps

    @property
    def nodes(self):
        return np.linspace(self.t0, self.T, self.steps + 1)

    def refine(self, factor=2):
        """Same interval with ``factor`` times as many steps."""
        if factor < 1 or int(factor) != factor:
            raise ConfigError("refinement factor must be a positive integer")
        return TimeGrid(self.t0, self.T, self.steps * int(factor))
