"""Command implementations: compute, then write artifacts single-writer.

Every command derives all randomness from the config seed, computes its
results fully, and only then writes files, so a crash mid-run cannot leave
a half-written artifact set behind the exit code.
"""

from __future__ import annotations

import time

import numpy as np

from ..bdsde import estimates_report, penalty_decay_study, solve_penalized, solve_reflected
from ..errors import ConfigError
from ..spde import (
    FieldConfig,
    MeasureConfig,
    TestPair,
    WeakTestFunction,
    estimate_measure,
    evaluate_field,
    weak_form_residual,
)
from ..stochastics import TimeGrid, sample_noise
from .artifacts import write_csv, write_json, write_manifest, write_timing
from .config import drift_derivative


def _noise_for(problem, steps, m_paths, n_w_paths, seed, t0=0.0):
    grid = TimeGrid(t0, problem.T, steps)
    return sample_noise(grid, problem.d, problem.l, m_paths, n_w_paths, seed)


def cmd_solve(cfg):
    tbl = cfg.table
    problem = cfg.problem
    bundle = _noise_for(
        problem,
        tbl["steps"],
        tbl["m_paths"],
        tbl.get("n_w_paths", 1),
        cfg.seed,
    )
    started = time.perf_counter()
    sol = solve_reflected(
        problem,
        bundle,
        tbl["schedule"],
        x0=tbl["x0"],
        tol=float(tbl.get("tol", 1e-2)),
    )
    wall = time.perf_counter() - started

    level_rows = []
    for lev in sol.solutions:
        row = {"n": int(lev.n)}
        for c in range(problem.k):
            row[f"y0_{c}"] = float(sol.y0_by_n[len(level_rows), c])
        diag = lev.diagnostics
        row["int_d2"] = diag["int_d2"]
        row["sup_d4"] = diag["sup_d4"]
        row["k_total_variation"] = diag["k_total_variation"]
        level_rows.append(row)
    write_csv(cfg.out_dir / "solution.csv", level_rows)
    write_csv(
        cfg.out_dir / "cauchy.csv",
        [
            {k: (int(v) if k.startswith("n_") else v) for k, v in c.items()}
            for c in sol.cauchy
        ],
    )
    write_manifest(cfg)
    write_timing(cfg, wall)

    y0 = ", ".join(f"{v:.6f}" for v in sol.y0)
    print(f"y0 = [{y0}] at n = {tbl['schedule'][-1]}")
    print(f"cauchy gap {sol.cauchy[-1]['gap']:.3e}; "
          f"interior distance {sol.distance_interior_max:.3e}")
    print(f"wall time {wall:.2f} s")
    if not sol.converged:
        print(f"not converged: {sol.message}")
        return 2
    print("converged")
    return 0


def cmd_study(cfg):
    tbl = cfg.table
    problem = cfg.problem
    bundle = _noise_for(
        problem,
        tbl["steps"],
        tbl["m_paths"],
        tbl.get("n_w_paths", 1),
        cfg.seed,
    )
    started = time.perf_counter()
    sols = [
        solve_penalized(problem, bundle, n, x0=tbl["x0"]) for n in tbl["levels"]
    ]
    study = penalty_decay_study(solutions=sols)
    report = estimates_report(sols)
    wall = time.perf_counter() - started

    decay = {r["n"]: r for r in study.rows()}
    rows = []
    for entry in report.table:
        row = dict(decay[float(entry["n"])])
        row["n"] = int(entry["n"])
        for key in (
            "sup_y2",
            "int_z2",
            "k_total_variation",
            "bound_var2",
            "data_functional",
            "uniform_ratio",
        ):
            row[key] = float(entry[key])
        rows.append(row)
    write_csv(cfg.out_dir / "study.csv", rows)
    write_json(
        cfg.out_dir / "summary.json",
        {
            "slope_int_d2": study.slope_d2,
            "slope_sup_d4": study.slope_d4,
            "escape_p": report.escape_p,
            "level_p": report.level_p,
            "trend_free": {k: bool(v) for k, v in report.trend_free.items()},
            "all_trend_free": bool(report.all_trend_free),
            "uniform_ratio_min": report.uniform_ratio_min,
            "uniform_ratio_max": report.uniform_ratio_max,
        },
    )
    write_manifest(cfg)
    write_timing(cfg, wall)

    print(f"distance decay slope {study.slope_d2:.3f} (sup^4 {study.slope_d4:.3f})")
    verdict = "yes" if report.all_trend_free else "no"
    print(f"all monitored quantities trend-free: {verdict}")
    print(f"wall time {wall:.2f} s")
    return 0


def _field_grid(tbl, problem):
    if "x_grid" in tbl:
        grid = np.asarray(tbl["x_grid"], dtype=float)
        if grid.ndim == 1:
            grid = grid[:, None]
        return grid
    if problem.d != 1:
        raise ConfigError(
            "x_lower/x_upper/x_points builds 1-d grids only; pass x_grid",
            field="x_grid",
        )
    lo = float(tbl["x_lower"])
    hi = float(tbl["x_upper"])
    pts = int(tbl["x_points"])
    if not hi > lo or pts < 1:
        raise ConfigError("x grid needs x_upper > x_lower and x_points >= 1",
                          field="x_points")
    return np.linspace(lo, hi, pts)[:, None]


def _window_test(cfg, center, halfwidth):
    """Compactly supported window paired with the catalogue adjoint.

    phi(s, x) = (1 + s) cos^4(pi (x - c) / (2 w)); the generator adjoint is
    assembled exactly from the named drift and constant diffusion, so the
    weak-form residual reflects estimator error, not operator error.
    """
    problem = cfg.problem
    if problem.d != 1:
        raise ConfigError("weak-form window supports d = 1 only", field="weakform")
    diff = cfg.problem_table.get("diffusion", {})
    if diff.get("kind", "constant") != "constant":
        raise ConfigError("weak-form window needs constant diffusion",
                          field="weakform")
    a = 0.5 * float(diff.get("value", 1.0)) ** 2
    drift_tbl = cfg.problem_table.get("drift", {})
    b = problem.b
    db = drift_derivative(drift_tbl)
    rate = 0.5 * np.pi / halfwidth

    def parts(x):
        u = (x[:, 0] - center) / halfwidth
        m = np.abs(u) < 1.0
        th = 0.5 * np.pi * u[m]
        c, s = np.cos(th), np.sin(th)
        w = np.zeros(x.shape[0])
        dw = np.zeros(x.shape[0])
        d2w = np.zeros(x.shape[0])
        w[m] = c**4
        dw[m] = -4.0 * c**3 * s * rate
        d2w[m] = (12.0 * c**2 * s**2 - 4.0 * c**4) * rate**2
        return w, dw, d2w

    def phi(s, x):
        return (1.0 + s) * parts(x)[0]

    def dphi_ds(s, x):
        return parts(x)[0]

    def lstar(s, x):
        w, dw, d2w = parts(x)
        bx = np.asarray(b(s, x), dtype=float)[:, 0]
        dbx = np.asarray(db(x), dtype=float)[:, 0]
        return (1.0 + s) * (a * d2w - bx * dw - dbx * w)

    return WeakTestFunction(
        phi=phi,
        dphi_ds=dphi_ds,
        lstar_phi=lstar,
        support_lower=center - halfwidth,
        support_upper=center + halfwidth,
        name="window",
    )


def cmd_field(cfg):
    tbl = cfg.table
    problem = cfg.problem
    grid = _field_grid(tbl, problem)
    t = float(tbl.get("t", 0.0))
    fc = FieldConfig(
        schedule=tuple(tbl.get("schedule", (64, 256))),
        steps=tbl["steps"],
        m_paths=tbl["m_paths"],
        n_w_paths=tbl.get("n_w_paths", 1),
        replicates=tbl.get("replicates", 1),
        seed=cfg.seed,
    )
    started = time.perf_counter()
    field = evaluate_field(problem, grid, t, fc)
    write_rows = [("field.csv", field.rows())]
    summary = {
        "t": field.t,
        "distance_max": field.distance_max,
        "worst_cauchy_gap": field.worst_gap,
        "all_converged": bool(field.converged.all()),
    }

    if tbl.get("measure", False):
        if not t < problem.T:
            raise ConfigError("measure estimation needs t < T", field="t")
        mc = MeasureConfig(
            box_lower=tuple(np.atleast_1d(tbl["box_lower"]).astype(float)),
            box_upper=tuple(np.atleast_1d(tbl["box_upper"]).astype(float)),
            n=float(tbl.get("measure_n", 256)),
            steps=int(tbl.get("measure_steps", tbl["steps"])),
            m_samples=tbl["m_samples"],
            t=t,
            seed=cfg.seed,
        )
        ones = TestPair(
            phi=lambda s, x: np.ones(x.shape[0]),
            psi=lambda s, x: np.ones(x.shape[0]),
            name="ones",
        )
        meas = estimate_measure(problem, field, [ones], mc)
        write_rows.append(("measure.csv", meas.rows()))
        atom_rows = [
            {
                "s": float(meas.atom_times[i]),
                **{
                    f"x{a}": float(meas.atom_locations[i, a])
                    for a in range(problem.d)
                },
                **{
                    f"mass_{c}": float(meas.atom_masses[i, c])
                    for c in range(problem.k)
                },
            }
            for i in range(meas.atom_times.size)
        ]
        summary["measure_total_variation"] = meas.total_variation
        summary["measure_support_violation"] = meas.support_violation
        if atom_rows:
            write_rows.append(("atoms.csv", atom_rows))

        wtbl = tbl.get("weakform")
        if wtbl is not None:
            rep = weak_form_residual(
                field,
                meas,
                _window_test(
                    cfg,
                    float(wtbl.get("window_center", 0.0)),
                    float(wtbl.get("window_halfwidth", 1.0)),
                ),
            )
            wrows = []
            for row in rep.rows():
                row["within_3se"] = rep.within(3.0)
                for term, vals in rep.terms.items():
                    row[f"term_{term}"] = float(vals[row["component"]])
                wrows.append(row)
            write_rows.append(("weakform.csv", wrows))
            summary["weakform_residual"] = [float(v) for v in rep.residual]
            summary["weakform_within_3se"] = rep.within(3.0)
    wall = time.perf_counter() - started

    for name, rows in write_rows:
        write_csv(cfg.out_dir / name, rows)
    write_json(cfg.out_dir / "summary.json", summary)
    write_manifest(cfg)
    write_timing(cfg, wall)

    head = ", ".join(f"{v:.4f}" for v in field.u0[:, 0][:5])
    print(f"field values at t = {field.t}: [{head}{', ...' if grid.shape[0] > 5 else ''}]")
    if "weakform_residual" in summary:
        print(f"weak-form residual {summary['weakform_residual'][0]:.4e} "
              f"(within 3 se: {summary['weakform_within_3se']})")
    print(f"wall time {wall:.2f} s")
    return 0


def cmd_verify(cfg):
    from .verify import CANONICAL, run_suite

    selection = cfg.table.get("suite", list(CANONICAL))
    started = time.perf_counter()
    rows = run_suite(selection, cfg.seed, cfg.problem, threads=cfg.threads)
    wall = time.perf_counter() - started

    for row in rows:
        print(f"{row['status']} {row['property']}: {row['detail']}")
    write_csv(cfg.out_dir / "verify.csv", rows)
    write_manifest(cfg)
    # no timing.json here: verify artifacts are byte-identical per seed
    print(f"wall time {wall:.2f} s")
    return 0 if all(r["status"] == "PASS" for r in rows) else 2
