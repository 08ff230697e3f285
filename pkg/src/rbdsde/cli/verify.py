"""Built-in property suite behind the verify command.

Four cheap, deterministic spot checks of the package's structural
guarantees: convex-projection identities, inverse-flow refinement,
Skorohod conditions on a reflecting solve, and weighted-norm equivalence
under a mean-reverting flow. Each property runs on its own substream of
the config seed, so the suite is reproducible property by property and
indifferent to how many threads execute it.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np

from ..bdsde import ProblemSpec, check_skorohod, solve_penalized
from ..errors import ConfigError
from ..geometry import Ball, Box, HalfSpace, HalfSpaceIntersection, distance, project
from ..spde import norm_equivalence_check
from ..stochastics import TimeGrid, forward_flow, inverse_flow, sample_noise
from ..stochastics.noise import substream

CANONICAL = ("geometry", "flow", "skorohod", "norms")


def _row(name, passed, statistic, threshold, detail):
    return {
        "property": name,
        "status": "PASS" if passed else "FAIL",
        "statistic": float(statistic),
        "threshold": threshold,
        "detail": detail,
    }


def _benchmark_problem():
    return ProblemSpec(
        domain=HalfSpace([-1.0], 0.0),
        T=1.0,
        d=1,
        k=1,
        l=1,
        Phi=lambda x: x.copy(),
        b=lambda t, x: np.zeros_like(x),
        sigma=lambda t, x: np.ones((x.shape[0], 1, 1)),
        terminal_range="warn",
    )


def _trig_problem():
    return ProblemSpec(
        domain=Box([-1e6], [1e6]),
        T=1.0,
        d=1,
        k=1,
        l=1,
        Phi=lambda x: x.copy(),
        b=lambda t, x: 0.8 * np.sin(x),
        sigma=lambda t, x: np.ones((x.shape[0], 1, 1)),
        terminal_range="warn",
    )


def _ou_problem():
    return ProblemSpec(
        domain=Box([-50.0], [50.0]),
        T=1.0,
        d=1,
        k=1,
        l=1,
        Phi=lambda x: x.copy(),
        b=lambda t, x: -0.5 * x,
        sigma=lambda t, x: np.ones((x.shape[0], 1, 1)),
        terminal_range="warn",
    )


def _check_geometry(seed, problem):
    rng = substream(seed, "replicate", index=11)
    domains = [
        Box([-1.0, -0.5], [1.0, 2.0]),
        Ball([0.5, -1.0], 1.5),
        HalfSpace([0.6, 0.8], 0.4),
        HalfSpaceIntersection(
            [[1.0, 0.0], [0.0, 1.0], [-0.70710678, -0.70710678]],
            [1.0, 1.0, 0.5],
        ),
    ]
    worst = 0.0
    for dom in domains:
        x = rng.uniform(-2.0, 2.0, size=(2000, 2))
        pr = project(dom, x)
        # idempotence: a projected point projects to itself
        worst = max(worst, float(np.max(project(dom, pr.point).distance)))
        # distance readout agrees with the projection gap
        gap = np.abs(distance(dom, x) - np.linalg.norm(x - pr.point, axis=1))
        worst = max(worst, float(np.max(gap)))
        # outward cone: closure points never sit past the projection plane
        z = dom.sample_closure(rng, 200)
        inner = np.einsum("nmd,nd->nm", z[None, :, :] - x[:, None, :], x - pr.point)
        worst = max(worst, float(np.max(inner)))
    return _row(
        "geometry",
        worst <= 1e-9,
        worst,
        "<= 1e-9",
        "max projection-identity residual over 4 domain kinds x 2000 points",
    )


def _check_flow(seed, problem):
    prob = _trig_problem()
    start_rng = substream(seed, "start", index=1)
    starts = start_rng.uniform(-2.0, 2.0, size=(4000, 1))
    errs = []
    for j, steps in enumerate((16, 32, 64)):
        child = int(substream(seed, "forward", index=j + 1).integers(2**62))
        bundle = sample_noise(TimeGrid(0.0, 1.0, steps), 1, 1, 4000, 1, child)
        ens = forward_flow(prob, bundle, starts)
        back = inverse_flow(prob, bundle, ens.states[:, -1], i_from=steps, i_to=0)
        errs.append(float(np.mean(np.abs(back - starts))))
    ratios = [errs[j] / errs[j + 1] for j in range(len(errs) - 1)]
    return _row(
        "flow",
        min(ratios) >= 1.2,
        min(ratios),
        ">= 1.2 per step halving",
        f"inversion error {errs[0]:.2e} -> {errs[-1]:.2e} over 16/32/64 steps",
    )


def _check_skorohod(seed, problem):
    prob = problem if problem is not None else _benchmark_problem()
    child = int(substream(seed, "forward", index=3).integers(2**62))
    bundle = sample_noise(
        TimeGrid(0.0, prob.T, 16), prob.d, prob.l, 3000, 1, child
    )
    sol = solve_penalized(prob, bundle, 256, x0=np.zeros(prob.d))
    rep = check_skorohod(sol)
    passed = rep.minimality_ok and rep.interior_mass < 0.1
    return _row(
        "skorohod",
        passed,
        rep.interior_mass,
        "minimality <= 2 se and interior mass < 0.1",
        f"worst minimality {rep.worst_mean:.3e} (se {rep.worst_se:.3e}), "
        f"interior mass {rep.interior_mass:.3e}",
    )


def _check_norms(seed, problem):
    prob = _ou_problem()
    child = int(substream(seed, "forward", index=5).integers(2**62))
    bumps = [
        (lambda c: (lambda x: np.exp(-((x[:, 0] - c) ** 2))))(c)
        for c in (-1.0, 0.0, 1.0)
    ]
    rep = norm_equivalence_check(
        prob, bumps, t=0.0, s=0.5, m_paths=32, doublings=0, steps=8,
        n_cells=401, seed=child,
    )
    passed = 0.2 <= rep.ratio_min <= rep.ratio_max <= 5.0
    return _row(
        "norms",
        passed,
        rep.ratio_max,
        "ratios within [0.2, 5]",
        f"pushforward/plain ratios in [{rep.ratio_min:.3f}, {rep.ratio_max:.3f}]",
    )


_CHECKS = {
    "geometry": _check_geometry,
    "flow": _check_flow,
    "skorohod": _check_skorohod,
    "norms": _check_norms,
}


def run_suite(selection, seed, problem, threads=1):
    """Run the selected properties; returns rows in canonical order."""
    if not selection:
        raise ConfigError("verify suite selection is empty", field="suite")
    unknown = sorted(set(selection) - set(CANONICAL))
    if unknown:
        raise ConfigError(
            f"unknown verify properties: {', '.join(unknown)}", field="suite"
        )
    names = [n for n in CANONICAL if n in set(selection)]
    with ThreadPoolExecutor(max_workers=min(threads, len(names))) as pool:
        futures = {n: pool.submit(_CHECKS[n], seed, problem) for n in names}
        return [futures[n].result() for n in names]
