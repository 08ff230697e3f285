"""Problem description for the reflected backward system.

The state X lives in R^d and is driven by the forward noise B; the value Y
lives in R^k and is constrained to the closure of a convex domain; the
backward noise W has l components. The generator f and the backward-noise
coefficient h may be omitted (treated as zero). Metadata carries the
Lipschitz constant and the contraction factor alpha < 1 of h in its z slot,
both validated here by randomized probes.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..errors import ConfigError, DomainError
from ..stochastics.noise import substream

_PROBE_SAMPLES = 1000
_PROBE_SEED = 424242


@dataclass
class ProblemSpec:
    """Coefficients, domain, and metadata of one reflected backward problem.

    Callable signatures (all vectorized over the leading sample axis):
      Phi(x: (M,d)) -> (M,k)
      f(t, x: (M,d), y: (M,k), z: (M,k,d)) -> (M,k)
      h(t, x: (M,d), y: (M,k), z: (M,k,d)) -> (M,k,l)
      b(t, x: (M,d)) -> (M,d)
      sigma(t, x: (M,d)) -> (M,d,d)
      db, dsigma: optional analytic Jacobians (see stochastics.flows)

    terminal_range: "error" enforces Phi(x) in the domain closure at setup
    (the standing terminal-condition assumption); "warn" records the
    violation fraction instead, for stress instances that deliberately sit
    outside it.
    """

    domain: object
    T: float
    d: int
    k: int
    l: int
    Phi: Callable
    b: Callable
    sigma: Callable
    f: Optional[Callable] = None
    h: Optional[Callable] = None
    db: Optional[Callable] = None
    dsigma: Optional[Callable] = None
    lipschitz_c: float = 1.0
    alpha: Optional[float] = None
    beta: Optional[float] = None
    terminal_range: str = "error"
    terminal_violation: float = field(default=0.0, init=False)

    def __post_init__(self):
        if self.T <= 0.0:
            raise ConfigError("horizon T must be positive", field="T")
        if min(self.d, self.k, self.l) < 1:
            raise ConfigError("dimensions d, k, l must be positive")
        if self.domain.dim != self.k:
            raise ConfigError(
                f"domain dimension {self.domain.dim} must equal k = {self.k}"
            )
        if self.terminal_range not in ("error", "warn"):
            raise ConfigError(
                "terminal_range must be 'error' or 'warn'", field="terminal_range"
            )
        if self.h is not None:
            if self.alpha is None:
                raise ConfigError(
                    "alpha (contraction of h in z, < 1) must be declared with h",
                    field="alpha",
                )
            if not 0.0 <= self.alpha < 1.0:
                raise ConfigError("alpha must lie in [0, 1)", field="alpha")
        self._probe_terminal()
        if self.h is not None:
            self._probe_h_contraction()

    # -- randomized validation ------------------------------------------------
    def _probe_terminal(self):
        rng = substream(_PROBE_SEED, "start")
        scale = 1.0 + float(np.linalg.norm(self.domain.interior_point))
        x = 3.0 * scale * rng.standard_normal((_PROBE_SAMPLES, self.d))
        values = np.asarray(self.Phi(x), dtype=float)
        if values.shape != (_PROBE_SAMPLES, self.k):
            raise ConfigError(
                f"Phi must map (M, {self.d}) to (M, {self.k}); got {values.shape}"
            )
        flat = values.reshape(-1, self.k)
        dist = np.linalg.norm(flat - self.domain._project(flat), axis=1)
        tol = 1e-9 * (1.0 + np.linalg.norm(flat, axis=1))
        bad = dist > tol
        self.terminal_violation = float(np.mean(bad))
        if self.terminal_violation > 0.0 and self.terminal_range == "error":
            raise DomainError(
                f"terminal map leaves the domain closure on "
                f"{100 * self.terminal_violation:.1f}% of sampled states; "
                f"pass terminal_range='warn' to run such an instance anyway"
            )

    def _probe_h_contraction(self):
        rng = substream(_PROBE_SEED, "replicate")
        m = 256
        x = rng.standard_normal((m, self.d))
        y = rng.standard_normal((m, self.k))
        z1 = rng.standard_normal((m, self.k, self.d))
        z2 = z1 + rng.standard_normal((m, self.k, self.d))
        t = 0.5 * self.T
        h1 = np.asarray(self.h(t, x, y, z1), dtype=float)
        h2 = np.asarray(self.h(t, x, y, z2), dtype=float)
        if h1.shape != (m, self.k, self.l):
            raise ConfigError(
                f"h must map to (M, {self.k}, {self.l}); got {h1.shape}"
            )
        num = np.linalg.norm((h1 - h2).reshape(m, -1), axis=1)
        den = np.linalg.norm((z1 - z2).reshape(m, -1), axis=1)
        quot = num / np.maximum(den, 1e-300)
        bound = np.sqrt(self.alpha) * (1.0 + 1e-6)
        if np.any(quot > bound):
            raise ConfigError(
                f"h difference quotient in z reaches {np.max(quot):.4f}, above "
                f"sqrt(alpha) = {np.sqrt(self.alpha):.4f}",
                field="alpha",
            )

    # -- zero-coefficient baselines for the data functional -------------------
    def f_at_origin(self, t, x):
        if self.f is None:
            return np.zeros((x.shape[0], self.k))
        z0 = np.zeros((x.shape[0], self.k, self.d))
        y0 = np.zeros((x.shape[0], self.k))
        return np.asarray(self.f(t, x, y0, z0), dtype=float)

    def h_at_origin(self, t, x):
        if self.h is None:
            return np.zeros((x.shape[0], self.k, self.l))
        z0 = np.zeros((x.shape[0], self.k, self.d))
        y0 = np.zeros((x.shape[0], self.k))
        return np.asarray(self.h(t, x, y0, z0), dtype=float)
