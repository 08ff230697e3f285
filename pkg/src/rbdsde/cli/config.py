"""Run configuration: TOML parsing and the named coefficient catalogue.

Configs are data, never code. A problem names catalogue entries (drift,
diffusion, terminal map, optional driver and backward coefficient) plus
their numeric parameters, and the loader assembles the callables. Unknown
keys are rejected so a typo cannot silently fall back to a default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib as _toml
except ImportError:  # pragma: no cover - python < 3.11
    import tomli as _toml

from ..bdsde import ProblemSpec
from ..errors import ConfigError
from ..geometry import domain_from_dict

COMMANDS = ("solve", "study", "field", "verify")


@dataclass(frozen=True)
class RunConfig:
    """One validated invocation: problem, command table, output target."""

    command: str
    config_bytes: bytes
    problem: object
    problem_table: dict
    table: dict
    out_dir: Path
    seed: int
    threads: int


def _require(table, key, section):
    if key not in table:
        raise ConfigError(f"[{section}] is missing '{key}'", field=key)
    return table[key]


def _reject_unknown(table, allowed, section):
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise ConfigError(
            f"[{section}] has unknown keys: {', '.join(extra)}", field=extra[0]
        )


def _positive_int(table, key, section, default=None):
    val = table.get(key, default)
    if val is None:
        raise ConfigError(f"[{section}] is missing '{key}'", field=key)
    if isinstance(val, bool) or not isinstance(val, int) or val < 1:
        raise ConfigError(
            f"[{section}] {key} must be a positive integer, got {val!r}", field=key
        )
    return val


def _vector(value, d, key):
    arr = np.asarray(value, dtype=float).reshape(-1)
    if arr.size == 1 and d > 1:
        arr = np.full(d, arr[0])
    if arr.size != d:
        raise ConfigError(f"{key} must have {d} entries, got {arr.size}", field=key)
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key} must be finite", field=key)
    return arr


# ---------------------------------------------------------------------------
# coefficient catalogue
# ---------------------------------------------------------------------------


def _drift_fn(spec, d):
    kind = spec.get("kind", "zero")
    if kind == "zero":
        _reject_unknown(spec, ("kind",), "problem.drift")
        return lambda t, x: np.zeros_like(x)
    if kind == "linear":
        _reject_unknown(spec, ("kind", "gain", "shift"), "problem.drift")
        gain = float(spec.get("gain", 0.0))
        shift = _vector(spec.get("shift", 0.0), d, "problem.drift.shift")
        return lambda t, x: gain * x + shift
    if kind == "ou":
        _reject_unknown(spec, ("kind", "theta"), "problem.drift")
        theta = float(_require(spec, "theta", "problem.drift"))
        if theta <= 0.0:
            raise ConfigError("ou drift needs theta > 0", field="theta")
        return lambda t, x: -theta * x
    if kind == "trig":
        _reject_unknown(spec, ("kind", "amplitude", "frequency"), "problem.drift")
        amp = float(_require(spec, "amplitude", "problem.drift"))
        freq = float(spec.get("frequency", 1.0))
        return lambda t, x: amp * np.sin(freq * x)
    raise ConfigError(f"unknown drift kind {kind!r}", field="kind")


def drift_derivative(spec):
    """x-derivative of a catalogue drift, for adjoint-operator assembly."""
    kind = spec.get("kind", "zero")
    if kind == "zero":
        return lambda x: np.zeros_like(x)
    if kind == "linear":
        gain = float(spec.get("gain", 0.0))
        return lambda x: np.full_like(x, gain)
    if kind == "ou":
        theta = float(spec["theta"])
        return lambda x: np.full_like(x, -theta)
    if kind == "trig":
        amp = float(spec["amplitude"])
        freq = float(spec.get("frequency", 1.0))
        return lambda x: amp * freq * np.cos(freq * x)
    raise ConfigError(f"unknown drift kind {kind!r}", field="kind")


def _diffusion_fn(spec, d, l):
    kind = spec.get("kind", "constant")
    if kind != "constant":
        raise ConfigError(f"unknown diffusion kind {kind!r}", field="kind")
    _reject_unknown(spec, ("kind", "value"), "problem.diffusion")
    value = float(spec.get("value", 1.0))
    if value < 0.0:
        raise ConfigError("diffusion value must be nonnegative", field="value")
    mat = value * np.eye(d, l)
    return lambda t, x: np.broadcast_to(mat, (x.shape[0], d, l)).copy()


def _terminal_fn(spec, d, k):
    kind = _require(spec, "kind", "problem.terminal")
    if kind == "ramp":
        _reject_unknown(spec, ("kind",), "problem.terminal")
        if k != d:
            raise ConfigError("ramp terminal needs k == d", field="kind")
        return lambda x: x.copy()
    if kind == "quadratic":
        _reject_unknown(spec, ("kind",), "problem.terminal")
        if k != 1:
            raise ConfigError("quadratic terminal needs k == 1", field="kind")
        return lambda x: np.sum(x**2, axis=1, keepdims=True)
    if kind == "hill":
        _reject_unknown(spec, ("kind", "center", "halfwidth"), "problem.terminal")
        if k != 1:
            raise ConfigError("hill terminal needs k == 1", field="kind")
        center = _vector(spec.get("center", 0.0), d, "problem.terminal.center")
        hw = float(spec.get("halfwidth", 1.0))
        if hw <= 0.0:
            raise ConfigError("hill halfwidth must be positive", field="halfwidth")

        def hill(x):
            u = (x - center) / hw
            out = np.prod(
                np.where(np.abs(u) < 1.0, np.cos(0.5 * np.pi * u) ** 4, 0.0),
                axis=1,
                keepdims=True,
            )
            return out

        return hill
    raise ConfigError(f"unknown terminal kind {kind!r}", field="kind")


def _driver_fn(spec, k):
    kind = spec.get("kind", "constant")
    if kind != "constant":
        raise ConfigError(f"unknown driver kind {kind!r}", field="kind")
    _reject_unknown(spec, ("kind", "value"), "problem.driver")
    value = _vector(spec.get("value", 0.0), k, "problem.driver.value")
    return lambda t, x, y, z: np.broadcast_to(value, (x.shape[0], k)).copy()


def _backward_fn(spec, k, l):
    kind = spec.get("kind", "constant")
    if kind != "constant":
        raise ConfigError(f"unknown backward kind {kind!r}", field="kind")
    _reject_unknown(spec, ("kind", "value", "alpha"), "problem.backward")
    value = float(spec.get("value", 0.0))
    alpha = float(spec.get("alpha", 0.0))
    fn = lambda t, x, y, z: np.full((x.shape[0], k, l), value)
    return fn, alpha


def build_problem(tbl):
    """Assemble a ProblemSpec from a [problem] table."""
    allowed = (
        "T",
        "d",
        "k",
        "l",
        "terminal_range",
        "domain",
        "terminal",
        "drift",
        "diffusion",
        "driver",
        "backward",
    )
    _reject_unknown(tbl, allowed, "problem")
    d = _positive_int(tbl, "d", "problem", default=1)
    k = _positive_int(tbl, "k", "problem", default=1)
    l = _positive_int(tbl, "l", "problem", default=1)
    T = float(tbl.get("T", 1.0))
    if not (math.isfinite(T) and T > 0.0):
        raise ConfigError("problem horizon T must be positive", field="T")
    rng_mode = tbl.get("terminal_range", "warn")

    dom_tbl = _require(tbl, "domain", "problem")
    domain = domain_from_dict(
        {
            "kind": _require(dom_tbl, "kind", "problem.domain"),
            "params": _require(dom_tbl, "params", "problem.domain"),
            "interior_point": dom_tbl.get("interior_point"),
            "gamma": dom_tbl.get("gamma"),
        }
    )

    h = None
    alpha = None
    if "backward" in tbl:
        h, alpha = _backward_fn(tbl["backward"], k, l)
    return ProblemSpec(
        domain=domain,
        T=T,
        d=d,
        k=k,
        l=l,
        Phi=_terminal_fn(_require(tbl, "terminal", "problem"), d, k),
        f=_driver_fn(tbl["driver"], k) if "driver" in tbl else None,
        h=h,
        alpha=alpha,
        b=_drift_fn(tbl.get("drift", {}), d),
        sigma=_diffusion_fn(tbl.get("diffusion", {}), d, l),
        terminal_range=rng_mode,
    )


# ---------------------------------------------------------------------------
# per-command tables
# ---------------------------------------------------------------------------

_TABLE_KEYS = {
    "solve": (
        "schedule",
        "steps",
        "m_paths",
        "n_w_paths",
        "x0",
        "seed",
        "tol",
    ),
    "study": ("levels", "steps", "m_paths", "n_w_paths", "x0", "seed"),
    "field": (
        "t",
        "x_grid",
        "x_lower",
        "x_upper",
        "x_points",
        "schedule",
        "steps",
        "m_paths",
        "n_w_paths",
        "replicates",
        "seed",
        "measure",
        "box_lower",
        "box_upper",
        "measure_n",
        "measure_steps",
        "m_samples",
        "weakform",
    ),
    "verify": ("suite", "seed", "x0"),
}


def _validate_table(command, table):
    _reject_unknown(table, _TABLE_KEYS[command], command)
    if command == "solve":
        sched = _require(table, "schedule", "solve")
        if not sched or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0
            for v in sched
        ):
            raise ConfigError("schedule entries must be positive", field="schedule")
        _positive_int(table, "steps", "solve")
        _positive_int(table, "m_paths", "solve")
        _positive_int(table, "n_w_paths", "solve", default=1)
        _require(table, "x0", "solve")
    elif command == "study":
        levels = _require(table, "levels", "study")
        if not levels or any(
            isinstance(v, bool) or not isinstance(v, (int, float)) or v <= 0
            for v in levels
        ):
            raise ConfigError("levels entries must be positive", field="levels")
        _positive_int(table, "steps", "study")
        _positive_int(table, "m_paths", "study")
        _require(table, "x0", "study")
    elif command == "field":
        _positive_int(table, "steps", "field")
        _positive_int(table, "m_paths", "field")
        _positive_int(table, "replicates", "field", default=1)
        if "x_grid" not in table and "x_points" not in table:
            raise ConfigError(
                "[field] needs either x_grid or x_lower/x_upper/x_points",
                field="x_grid",
            )
        if table.get("measure", False):
            _require(table, "box_lower", "field")
            _require(table, "box_upper", "field")
            _positive_int(table, "m_samples", "field")
    elif command == "verify":
        if "suite" in table and not table["suite"]:
            raise ConfigError("verify suite selection is empty", field="suite")


def load_config(command, path, out_dir, seed_override=None, threads=1):
    """Parse, validate, and freeze one command invocation."""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command {command!r}", field="command")
    if threads < 1:
        raise ConfigError("threads must be at least 1", field="threads")
    p = Path(path)
    try:
        raw = p.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}", field="config") from exc
    try:
        data = _toml.loads(raw.decode("utf-8"))
    except (_toml.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"config does not parse: {exc}", field="config") from exc

    table = data.get(command)
    if table is None:
        raise ConfigError(f"config has no [{command}] section", field=command)
    _validate_table(command, table)

    seed = seed_override if seed_override is not None else table.get("seed")
    if seed is None:
        raise ConfigError(
            "seed must be set in the config or with --seed; "
            "wall-clock seeding is not supported",
            field="seed",
        )
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a nonnegative integer, got {seed!r}",
                          field="seed")

    problem_table = data.get("problem")
    problem = build_problem(problem_table) if problem_table is not None else None
    if problem is None and command in ("solve", "study", "field"):
        raise ConfigError(f"[{command}] requires a [problem] section",
                          field="problem")

    return RunConfig(
        command=command,
        config_bytes=raw,
        problem=problem,
        problem_table=problem_table or {},
        table=table,
        out_dir=Path(out_dir),
        seed=int(seed),
        threads=int(threads),
    )
