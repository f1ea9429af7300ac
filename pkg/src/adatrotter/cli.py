"""Scenario-driven command line: run, sweep, compare and ed workflows.

Scenarios are JSON files resolving to one fully validated run; every key is
either consumed or rejected.  All outputs are CSV files with a commented
schema header, 17-significant-digit numbers, comma delimiters and Unix
newlines, so identical scenarios and seeds reproduce byte-identical files.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .adaptive import (
    BISECTION,
    SEQUENTIAL,
    Budget,
    RunRecord,
    SearchConfig,
    ToleranceSet,
    run_ada_trotter,
    run_fixed_trotter,
)
from .hilbert import BasisLabel, StateVector, all_down_state, global_y_rotation, product_state
from .noise import NoiseParams, run_noisy_ada_trotter
from .operators import (
    DisorderSpec,
    IsingParams,
    QlmParams,
    SparseOperator,
    TrotterSplit,
    build_ising,
    build_qlm,
    magnetization_x,
    magnetization_z,
)
from .propagate import exact_trace
from .spectral import (
    AveragingWindow,
    MicrocanonicalCurve,
    dense_diagonalize,
    energy_distribution,
    filtered_state,
    long_time_average,
)

THREADS_ENV = "ADA_TROTTER_THREADS"

OBSERVABLE_BUILDERS = {
    "m_x": magnetization_x,
    "m_z": magnetization_z,
}


class ScenarioError(ValueError):
    """Raised when a scenario file fails validation; names the offending key."""


# ---------------------------------------------------------------------------
# Validation helpers
# ---------------------------------------------------------------------------

def _require_mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ScenarioError(f"{path} must be an object")
    return value


def _reject_unknown(section: dict, known: set[str], path: str) -> None:
    unknown = set(section) - known
    if unknown:
        raise ScenarioError(f"unknown key {path}.{sorted(unknown)[0]}")


def _as_float(value, path: str, *, positive=False, nonnegative=False) -> float:
    if isinstance(value, str) and value.lower() in ("inf", "infinity"):
        value = math.inf
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{path} must be a number")
    value = float(value)
    if math.isnan(value):
        raise ScenarioError(f"{path} must not be NaN")
    if positive and not value > 0:
        raise ScenarioError(f"{path} must be > 0")
    if nonnegative and value < 0:
        raise ScenarioError(f"{path} must be >= 0")
    return value


def _as_int(value, path: str, *, minimum: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ScenarioError(f"{path} must be an integer")
    if minimum is not None and value < minimum:
        raise ScenarioError(f"{path} must be >= {minimum}")
    return value


def _as_choice(value, path: str, choices) -> str:
    if value not in choices:
        raise ScenarioError(f"{path} must be one of {sorted(choices)}")
    return value


@dataclass
class Scenario:
    model_kind: str
    ising: Optional[IsingParams]
    qlm: Optional[QlmParams]
    initial: dict
    tol: ToleranceSet
    search: SearchConfig
    budget: Budget
    observables: list[str]
    record_moments: list[int]
    window_fraction: tuple[float, float]
    noise: Optional[NoiseParams]
    scheme: str
    output: str
    seed: int
    resolved: dict  # flattened key -> value for meta.csv


def _parse_model(section, path="model"):
    section = _require_mapping(section, path)
    kind = _as_choice(section.get("kind"), f"{path}.kind", {"ising", "long_range", "qlm"})
    if kind == "qlm":
        _reject_unknown(section, {"kind", "J", "mu", "k", "S", "lambda", "L"}, path)
        params = QlmParams(
            j=_as_float(section.get("J", 0), f"{path}.J"),
            mu=_as_float(section.get("mu", 0), f"{path}.mu"),
            k=_as_float(section.get("k", 0), f"{path}.k"),
            S=_as_float(section.get("S", 1), f"{path}.S", positive=True),
            lam=_as_float(section.get("lambda", 0), f"{path}.lambda"),
            L=_as_int(section.get("L"), f"{path}.L", minimum=2),
        )
        return kind, None, params
    known = {"kind", "J_z", "h_x", "h_z", "L", "boundary", "disorder"}
    if kind == "long_range":
        known.add("alpha")
    _reject_unknown(section, known, path)
    disorder = None
    if section.get("disorder") is not None:
        dsec = _require_mapping(section["disorder"], f"{path}.disorder")
        _reject_unknown(dsec, {"delta_J", "seed"}, f"{path}.disorder")
        disorder = DisorderSpec(
            delta_j=_as_float(dsec.get("delta_J"), f"{path}.disorder.delta_J", nonnegative=True),
            seed=_as_int(dsec.get("seed", 0), f"{path}.disorder.seed", minimum=0),
        )
    alpha = math.inf
    if kind == "long_range":
        alpha = _as_float(section.get("alpha"), f"{path}.alpha", positive=True)
    params = IsingParams(
        j_z=_as_float(section.get("J_z", 0), f"{path}.J_z"),
        h_x=_as_float(section.get("h_x", 0), f"{path}.h_x"),
        h_z=_as_float(section.get("h_z", 0), f"{path}.h_z"),
        L=_as_int(section.get("L"), f"{path}.L", minimum=2),
        boundary=_as_choice(section.get("boundary", "periodic"), f"{path}.boundary", {"periodic", "open"}),
        alpha=alpha,
        disorder=disorder,
    )
    return kind, params, None


def _parse_initial(section, path="initial_state"):
    section = _require_mapping(section, path)
    kind = _as_choice(section.get("kind"), f"{path}.kind", {"product", "y_rotation", "filtered"})
    if kind == "product":
        _reject_unknown(section, {"kind", "bits", "links"}, path)
        bits = section.get("bits")
        if not isinstance(bits, list) or any(b not in (0, 1) for b in bits):
            raise ScenarioError(f"{path}.bits must be a list of 0/1")
        links = section.get("links")
        if links is not None and not isinstance(links, list):
            raise ScenarioError(f"{path}.links must be a list of levels")
        return {"kind": kind, "bits": bits, "links": links}
    if kind == "y_rotation":
        _reject_unknown(section, {"kind", "theta"}, path)
        return {"kind": kind, "theta": _as_float(section.get("theta"), f"{path}.theta")}
    _reject_unknown(section, {"kind", "centers", "width"}, path)
    centers = section.get("centers")
    if not isinstance(centers, list) or not 1 <= len(centers) <= 2:
        raise ScenarioError(f"{path}.centers must hold one or two energies")
    return {
        "kind": kind,
        "centers": [_as_float(c, f"{path}.centers") for c in centers],
        "width": _as_float(section.get("width"), f"{path}.width", positive=True),
    }


def _parse_tolerances(section, path="tolerances") -> ToleranceSet:
    section = _require_mapping(section, path)
    _reject_unknown(section, {"d_E", "d_var", "d_G", "d_Gvar", "soft_inflation"}, path)
    def tol_field(key, default=None):
        if key not in section or section[key] is None:
            return default
        return _as_float(section[key], f"{path}.{key}", positive=True)
    try:
        return ToleranceSet(
            d_e=tol_field("d_E", math.inf),
            d_var=tol_field("d_var", math.inf),
            d_g=tol_field("d_G"),
            d_gvar=tol_field("d_Gvar"),
            soft_inflation=_as_float(section.get("soft_inflation", 1.3), f"{path}.soft_inflation"),
        )
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _parse_search(section, path="search") -> SearchConfig:
    if section is None:
        return SearchConfig()
    section = _require_mapping(section, path)
    _reject_unknown(
        section, {"algorithm", "t_min", "t_max", "dtau", "p_E", "p_var", "M_max", "R_max"}, path
    )
    algorithm = _as_choice(
        section.get("algorithm", BISECTION), f"{path}.algorithm", {SEQUENTIAL, BISECTION}
    )
    kwargs = dict(algorithm=algorithm)
    if "t_min" in section:
        kwargs["t_min"] = _as_float(section["t_min"], f"{path}.t_min", positive=True)
    if "t_max" in section:
        kwargs["t_max"] = _as_float(section["t_max"], f"{path}.t_max", positive=True)
    if "dtau" in section:
        kwargs["dtau"] = _as_float(section["dtau"], f"{path}.dtau", positive=True)
    if section.get("p_E") is not None:
        kwargs["p_e"] = _as_float(section["p_E"], f"{path}.p_E", positive=True)
    if section.get("p_var") is not None:
        kwargs["p_var"] = _as_float(section["p_var"], f"{path}.p_var", positive=True)
    if "M_max" in section:
        kwargs["m_max"] = _as_int(section["M_max"], f"{path}.M_max", minimum=1)
    if "R_max" in section:
        kwargs["r_max"] = _as_int(section["R_max"], f"{path}.R_max", minimum=1)
    try:
        return SearchConfig(**kwargs)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _parse_budget(section, path="budget") -> Budget:
    section = _require_mapping(section, path)
    _reject_unknown(section, {"max_steps", "max_time"}, path)
    max_steps = None
    if section.get("max_steps") is not None:
        max_steps = _as_int(section["max_steps"], f"{path}.max_steps", minimum=0)
    max_time = None
    if section.get("max_time") is not None:
        max_time = _as_float(section["max_time"], f"{path}.max_time", positive=True)
    try:
        return Budget(max_steps=max_steps, max_time=max_time)
    except ValueError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def _parse_noise(section, default_seed: int, path="noise") -> Optional[NoiseParams]:
    if section is None:
        return None
    section = _require_mapping(section, path)
    _reject_unknown(section, {"gamma", "s_max", "seed", "reuse_noise_per_step"}, path)
    reuse = section.get("reuse_noise_per_step", False)
    if not isinstance(reuse, bool):
        raise ScenarioError(f"{path}.reuse_noise_per_step must be a boolean")
    return NoiseParams(
        gamma=_as_float(section.get("gamma"), f"{path}.gamma", nonnegative=True),
        s_max=_as_int(section.get("s_max", 1), f"{path}.s_max", minimum=1),
        seed=_as_int(section.get("seed", default_seed), f"{path}.seed", minimum=0),
        reuse_noise_per_step=reuse,
    )


def _flatten(prefix: str, value, out: dict) -> None:
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else str(k), v, out)
    elif isinstance(value, list):
        out[prefix] = ";".join(str(v) for v in value)
    else:
        out[prefix] = value


def load_scenario(path: str | Path, seed_override: Optional[int] = None) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"scenario does not parse as JSON: {exc}") from exc
    raw = _require_mapping(raw, "scenario")
    _reject_unknown(
        raw,
        {
            "model",
            "initial_state",
            "tolerances",
            "search",
            "budget",
            "observables",
            "record_moments",
            "average_window",
            "noise",
            "scheme",
            "output",
            "seed",
        },
        "scenario",
    )
    if "model" not in raw:
        raise ScenarioError("missing section scenario.model")
    if "initial_state" not in raw:
        raise ScenarioError("missing section scenario.initial_state")
    if "budget" not in raw:
        raise ScenarioError("missing section scenario.budget")

    seed = _as_int(raw.get("seed", 0), "seed", minimum=0)
    if seed_override is not None:
        seed = seed_override
    model_kind, ising, qlm = _parse_model(raw["model"])
    initial = _parse_initial(raw["initial_state"])
    tol = _parse_tolerances(raw.get("tolerances", {}))
    search = _parse_search(raw.get("search"))
    budget = _parse_budget(raw["budget"])

    observables = raw.get("observables", ["m_x", "m_z"])
    if not isinstance(observables, list):
        raise ScenarioError("observables must be a list of names")
    for name in observables:
        if name not in OBSERVABLE_BUILDERS:
            raise ScenarioError(f"observables: unknown observable {name!r}")

    record_moments = raw.get("record_moments", [])
    if not isinstance(record_moments, list):
        raise ScenarioError("record_moments must be a list of integers")
    record_moments = [_as_int(n, "record_moments", minimum=1) for n in record_moments]

    window = raw.get("average_window")
    if window is None:
        window_fraction = (0.6, 1.0)
    else:
        window = _require_mapping(window, "average_window")
        _reject_unknown(window, {"start_fraction", "end_fraction"}, "average_window")
        window_fraction = (
            _as_float(window.get("start_fraction", 0.6), "average_window.start_fraction", nonnegative=True),
            _as_float(window.get("end_fraction", 1.0), "average_window.end_fraction", positive=True),
        )
        if not window_fraction[0] < window_fraction[1] <= 1.0:
            raise ScenarioError("average_window fractions must satisfy 0 <= start < end <= 1")

    scheme = _as_choice(raw.get("scheme", "symmetric"), "scheme", {"symmetric", "plain"})
    noise = _parse_noise(raw.get("noise"), seed)
    if noise is not None and model_kind != "ising":
        raise ScenarioError("noise requires the nearest-neighbor ising model")
    if noise is not None and scheme != "symmetric":
        raise ScenarioError("scheme: noisy runs support the symmetric splitting only")
    if tol.tracks_gauge and model_kind != "qlm":
        raise ScenarioError("tolerances.d_G/d_Gvar require the qlm model")

    output = raw.get("output", "run")
    if not isinstance(output, str) or not output:
        raise ScenarioError("output must be a non-empty string")

    resolved: dict = {}
    _flatten("", raw, resolved)
    resolved["seed"] = seed

    return Scenario(
        model_kind=model_kind,
        ising=ising,
        qlm=qlm,
        initial=initial,
        tol=tol,
        search=search,
        budget=budget,
        observables=list(observables),
        record_moments=record_moments,
        window_fraction=window_fraction,
        noise=noise,
        scheme=scheme,
        output=output,
        seed=seed,
        resolved=resolved,
    )


# ---------------------------------------------------------------------------
# Problem assembly
# ---------------------------------------------------------------------------

@dataclass
class Problem:
    split: TrotterSplit
    psi0: StateVector
    gauge_generators: Optional[list[SparseOperator]]
    observables: list[tuple[str, SparseOperator]]


def build_problem(sc: Scenario) -> Problem:
    if sc.model_kind == "qlm":
        split, generators = build_qlm(sc.qlm)
    else:
        split = build_ising(sc.ising)
        generators = None
    if sc.scheme != split.scheme:
        split = replace(split, scheme=sc.scheme)
    space = split.space

    kind = sc.initial["kind"]
    if kind == "product":
        bits = sc.initial["bits"]
        if len(bits) != space.L:
            raise ScenarioError(f"initial_state.bits must list {space.L} sites")
        links = sc.initial["links"]
        if space.kind == "link_model":
            if links is None or len(links) != space.n_links:
                raise ScenarioError(f"initial_state.links must list {space.n_links} levels")
            label = BasisLabel(tuple(bits), tuple(float(v) for v in links))
        else:
            if links is not None:
                raise ScenarioError("initial_state.links is only valid for the qlm model")
            label = BasisLabel(tuple(bits))
        psi0 = product_state(space, label)
    elif kind == "y_rotation":
        psi0 = global_y_rotation(all_down_state(space), sc.initial["theta"])
    else:
        ed = dense_diagonalize(split.total)
        psi0 = filtered_state(ed, sc.initial["centers"], sc.initial["width"])

    observables = [(name, OBSERVABLE_BUILDERS[name](space)) for name in sc.observables]
    return Problem(split, psi0, generators, observables)


# ---------------------------------------------------------------------------
# CSV output
# ---------------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "nan"
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, str):
        return value
    return f"{float(value):.17g}"


def write_csv(path: Path, title: str, columns: list[str], rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="\n") as fh:
        fh.write(f"# {title}\n")
        fh.write(f"# columns: {','.join(columns)}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


STEP_BASE_COLUMNS = [
    "t",
    "dt",
    "attempts",
    "freeze",
    "e_density",
    "var_density",
    "dev_e",
    "dev_var",
    "f_e",
    "f_var",
    "tol_e",
    "tol_var",
    "dev_g",
    "dev_gvar",
    "f_g",
    "f_gvar",
    "tol_g",
    "tol_gvar",
]


def steps_columns(sc: Scenario) -> list[str]:
    return (
        STEP_BASE_COLUMNS
        + [f"moment{n}" for n in sc.record_moments]
        + list(sc.observables)
    )


def _step_row(log, sc: Scenario) -> list:
    row = [
        log.t,
        log.dt,
        log.attempts,
        log.freeze,
        log.e_density,
        log.var_density,
        log.dev_e,
        log.dev_var,
        log.f_e,
        log.f_var,
        log.tol_e,
        log.tol_var,
        log.dev_g,
        log.dev_gvar,
        log.f_g,
        log.f_gvar,
        log.tol_g,
        log.tol_gvar,
    ]
    row.extend(log.moments[n] for n in sc.record_moments)
    row.extend(log.observables[name] for name in sc.observables)
    return row


def write_steps_csv(path: Path, record: RunRecord, sc: Scenario) -> None:
    write_csv(
        path,
        "adatrotter steps v1 (time in inverse coupling units, densities per site)",
        steps_columns(sc),
        (_step_row(log, sc) for log in record.steps),
    )


def write_meta_csv(path: Path, record: RunRecord, sc: Scenario) -> None:
    rows = [("package_version", __version__), ("numpy_version", np.__version__)]
    rows += sorted(sc.resolved.items())
    rows.append(("ref_e_density", _fmt(record.refs.e_density)))
    rows.append(("ref_var_density", _fmt(record.refs.var_density)))
    for name, value in sorted(record.initial.observables.items()):
        rows.append((f"initial.{name}", _fmt(value)))
    rows.append(("tol_e_effective", _fmt(sc.tol.d_e)))
    rows.append(("tol_var_effective", _fmt(sc.tol.d_var)))
    write_csv(path, "adatrotter meta v1 (key,value pairs)", ["key", "value"], rows)


# ---------------------------------------------------------------------------
# Command implementations
# ---------------------------------------------------------------------------

def _execute(sc: Scenario) -> RunRecord:
    problem = build_problem(sc)
    if sc.noise is not None:
        result = run_noisy_ada_trotter(
            sc.ising,
            problem.psi0,
            sc.noise,
            sc.tol,
            sc.search,
            sc.budget,
            problem.observables,
            record_moments=sc.record_moments,
        )
        return result.record
    return run_ada_trotter(
        problem.split,
        problem.psi0,
        sc.tol,
        sc.search,
        sc.budget,
        problem.observables,
        gauge_generators=problem.gauge_generators,
        record_moments=sc.record_moments,
    )


def cmd_run(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    record = _execute(sc)
    out = Path(args.out)
    write_steps_csv(out / f"{sc.output}_steps.csv", record, sc)
    write_meta_csv(out / f"{sc.output}_meta.csv", record, sc)
    print(f"wrote {out / (sc.output + '_steps.csv')} ({len(record.steps)} steps)")
    return 0


SWEEP_AXES = {"d_E", "d_var", "gamma", "dt"}


def _sweep_one(sc: Scenario, axis: str, value: float) -> list:
    if axis == "d_E":
        sc = replace(sc, tol=replace_tolerance(sc.tol, d_e=value))
    elif axis == "d_var":
        sc = replace(sc, tol=replace_tolerance(sc.tol, d_var=value))
    elif axis == "gamma":
        if sc.noise is None:
            raise ScenarioError("gamma sweep requires a noise section")
        sc = replace(sc, noise=replace(sc.noise, gamma=value))

    if axis == "dt":
        if sc.budget.max_steps is None:
            raise ScenarioError("dt sweep requires budget.max_steps")
        problem = build_problem(sc)
        record = run_fixed_trotter(
            problem.split,
            problem.psi0,
            value,
            sc.budget.max_steps,
            problem.observables,
            gauge_generators=problem.gauge_generators,
            record_moments=sc.record_moments,
        )
    else:
        record = _execute(sc)

    t_final = record.final_time
    row = [
        axis,
        value,
        t_final,
        len(record.steps),
        record.freeze_count,
        record.mean_attempts,
        record.steps[-1].dev_e if record.steps else 0.0,
        record.steps[-1].dev_var if record.steps else 0.0,
    ]
    times = record.times()
    for name in sc.observables:
        values = record.observable(name)
        if t_final > 0:
            window = AveragingWindow(sc.window_fraction[0] * t_final, sc.window_fraction[1] * t_final)
            mask = (times >= window.t_start) & (times <= window.t_end)
            if mask.sum() >= 2:
                mean, std = long_time_average(times, values, window)
            else:
                mean, std = float(values[-1]), 0.0
        else:
            mean, std = float(values[-1]), 0.0
        row.extend([mean, std])
    return row


def replace_tolerance(tol: ToleranceSet, **kwargs) -> ToleranceSet:
    base = dict(
        d_e=tol.d_e, d_var=tol.d_var, d_g=tol.d_g, d_gvar=tol.d_gvar,
        soft_inflation=tol.soft_inflation,
    )
    base.update(kwargs)
    return ToleranceSet(**base)


def cmd_sweep(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    if args.axis not in SWEEP_AXES:
        raise ScenarioError(f"sweep axis must be one of {sorted(SWEEP_AXES)}")
    values = [float(v) for v in args.values.split(",") if v]
    if not values:
        raise ScenarioError("sweep needs at least one value")
    threads = resolve_threads(args.threads)
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(lambda v: _sweep_one(sc, args.axis, v), values))
    else:
        rows = [_sweep_one(sc, args.axis, v) for v in values]
    columns = [
        "axis",
        "value",
        "reached_time",
        "n_steps",
        "freeze_count",
        "mean_attempts",
        "final_dev_e",
        "final_dev_var",
    ]
    for name in sc.observables:
        columns.extend([f"{name}_mean", f"{name}_std"])
    out = Path(args.out)
    write_csv(out / f"{sc.output}_sweep.csv", "adatrotter sweep v1", columns, rows)
    print(f"wrote {out / (sc.output + '_sweep.csv')} ({len(rows)} rows)")
    return 0


def _max_observable_error(record: RunRecord, problem: Problem, name: str) -> float:
    times = record.times(include_initial=False)
    if times.size == 0:
        return 0.0
    exact = exact_trace(problem.split, problem.psi0, times, problem.observables)
    return float(np.max(np.abs(record.observable(name, include_initial=False) - exact[name])))


def cmd_compare(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    if "m_x" not in sc.observables:
        sc = replace(sc, observables=sc.observables + ["m_x"])
    budget_steps = args.budget
    sc = replace(sc, budget=Budget(max_steps=budget_steps))
    problem = build_problem(sc)

    rows = []
    ada = run_ada_trotter(
        problem.split,
        problem.psi0,
        sc.tol,
        sc.search,
        sc.budget,
        problem.observables,
        gauge_generators=problem.gauge_generators,
        record_moments=sc.record_moments,
    )
    rows.append(
        [
            "ada",
            math.nan,
            ada.final_time,
            len(ada.steps),
            _max_observable_error(ada, problem, "m_x"),
            ada.steps[-1].dev_e if ada.steps else 0.0,
            ada.steps[-1].dev_var if ada.steps else 0.0,
        ]
    )
    for dt in [float(v) for v in args.dts.split(",") if v]:
        fixed = run_fixed_trotter(
            problem.split,
            problem.psi0,
            dt,
            budget_steps,
            problem.observables,
            tol=sc.tol,
            gauge_generators=problem.gauge_generators,
            record_moments=sc.record_moments,
        )
        rows.append(
            [
                "fixed",
                dt,
                fixed.final_time,
                len(fixed.steps),
                _max_observable_error(fixed, problem, "m_x"),
                fixed.steps[-1].dev_e if fixed.steps else 0.0,
                fixed.steps[-1].dev_var if fixed.steps else 0.0,
            ]
        )
    out = Path(args.out)
    write_csv(
        out / f"{sc.output}_compare.csv",
        "adatrotter compare v1 (same gate budget per method)",
        ["method", "dt", "reached_time", "n_steps", "max_err_m_x", "final_dev_e", "final_dev_var"],
        rows,
    )
    print(f"wrote {out / (sc.output + '_compare.csv')} ({len(rows)} rows)")
    return 0


def cmd_ed(args) -> int:
    sc = load_scenario(args.scenario, args.seed)
    problem = build_problem(sc)
    ed = dense_diagonalize(problem.split.total)
    out = Path(args.out)

    write_csv(
        out / f"{sc.output}_spectrum.csv",
        "adatrotter spectrum v1",
        ["index", "energy"],
        ((i, e) for i, e in enumerate(ed.eigenvalues)),
    )

    L = problem.split.space.L
    lo, hi = ed.eigenvalues[0] / L, ed.eigenvalues[-1] / L
    pad = 0.05 * (hi - lo)
    grid = np.linspace(lo + pad, hi - pad, 101)
    curves = {
        name: MicrocanonicalCurve(ed, op, L) for name, op in problem.observables
    }
    rows = ([e] + [curves[name](e) for name in sc.observables] for e in grid)
    write_csv(
        out / f"{sc.output}_microcanonical.csv",
        "adatrotter microcanonical v1 (energy density grid)",
        ["e_density"] + list(sc.observables),
        rows,
    )

    energies, weights = energy_distribution(ed, problem.psi0)
    write_csv(
        out / f"{sc.output}_distribution.csv",
        "adatrotter energy distribution v1",
        ["energy", "weight"],
        zip(energies, weights),
    )
    print(f"wrote spectrum/microcanonical/distribution CSVs under {out}")
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def resolve_threads(option: Optional[int]) -> int:
    if option is not None:
        return max(1, option)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            return 1
    return 1


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    common.add_argument(
        "--threads", type=int, default=None, help=f"worker threads (or ${THREADS_ENV})"
    )

    parser = argparse.ArgumentParser(
        prog="adatrotter",
        description="Adaptive-step quantum dynamics runs driven by scenario files",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", parents=[common], help="execute one scenario")
    p_run.add_argument("scenario")
    p_run.set_defaults(func=cmd_run)

    p_sweep = sub.add_parser("sweep", parents=[common], help="sweep one axis over values")
    p_sweep.add_argument("scenario")
    p_sweep.add_argument("--axis", required=True, help="d_E | d_var | gamma | dt")
    p_sweep.add_argument("--values", required=True, help="comma-separated values")
    p_sweep.set_defaults(func=cmd_sweep)

    p_cmp = sub.add_parser("compare", parents=[common], help="adaptive vs fixed-step baselines")
    p_cmp.add_argument("scenario")
    p_cmp.add_argument("--dts", required=True, help="comma-separated fixed step sizes")
    p_cmp.add_argument("--budget", type=int, required=True, help="steps per method")
    p_cmp.set_defaults(func=cmd_compare)

    p_ed = sub.add_parser("ed", parents=[common], help="spectrum and spectral analysis files")
    p_ed.add_argument("scenario")
    p_ed.set_defaults(func=cmd_ed)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
