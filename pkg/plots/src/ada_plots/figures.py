"""Render paper-style panels from adatrotter CSV files.

Panels: observable traces with an optional exact reference, energy/variance
bands with tolerance lines, error-vs-tolerance scaling fits (slope and
intercept printed with standard errors), and gauge-violation log plots.
Rendering is read-only and idempotent; figures carry no timestamps.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

PANELS = ("trace", "band", "scaling_fit", "gauge_log")


class FigureError(ValueError):
    pass


def load_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Read an adatrotter CSV: comment preamble, header row, float columns."""
    path = Path(path)
    if not path.exists():
        raise FigureError(f"input CSV not found: {path}")
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if not rows:
        raise FigureError(f"input CSV is empty: {path}")
    header, data = rows[0], rows[1:]
    if not data:
        raise FigureError(f"no data rows in {path}")
    columns: dict[str, np.ndarray] = {}
    for k, name in enumerate(header):
        values = [row[k] for row in data]
        try:
            columns[name] = np.array([float(v) for v in values])
        except ValueError:
            columns[name] = np.array(values)
    return columns


def load_meta(path: str | Path) -> dict[str, str]:
    table = load_csv(path)
    if "key" not in table or "value" not in table:
        raise FigureError(f"{path} is not a key,value meta file")
    return {str(k): str(v) for k, v in zip(table["key"], table["value"])}


def require_column(table: dict, name: str, source: str) -> np.ndarray:
    if name not in table:
        raise FigureError(f"column {name!r} missing from {source}")
    return table[name]


@dataclass
class FigureSpec:
    panel: str
    inputs: dict[str, str]
    output: str
    x_label: str = ""
    y_label: str = ""
    series: list[str] = field(default_factory=list)
    band_column: str = "e_density"
    band_reference: str = "ref_e_density"
    band_tolerance: str = "tolerances.d_E"
    fit_x: str = "value"
    fit_y: str = "m_z_mean"
    fit_x_divisor: str | None = None

    @staticmethod
    def load(path: str | Path) -> "FigureSpec":
        path = Path(path)
        if not path.exists():
            raise FigureError(f"figure spec not found: {path}")
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise FigureError(f"figure spec does not parse: {exc}") from exc
        if not isinstance(raw, dict):
            raise FigureError("figure spec must be a JSON object")
        panel = raw.get("panel")
        if panel not in PANELS:
            raise FigureError(f"panel must be one of {PANELS}")
        known = {
            "panel", "inputs", "output", "x_label", "y_label", "series",
            "band_column", "band_reference", "band_tolerance",
            "fit_x", "fit_y", "fit_x_divisor",
        }
        unknown = set(raw) - known
        if unknown:
            raise FigureError(f"unknown figure-spec key {sorted(unknown)[0]}")
        if "inputs" not in raw or "output" not in raw:
            raise FigureError("figure spec needs inputs and output")
        return FigureSpec(
            panel=panel,
            inputs=dict(raw["inputs"]),
            output=str(raw["output"]),
            x_label=raw.get("x_label", ""),
            y_label=raw.get("y_label", ""),
            series=list(raw.get("series", [])),
            band_column=raw.get("band_column", "e_density"),
            band_reference=raw.get("band_reference", "ref_e_density"),
            band_tolerance=raw.get("band_tolerance", "tolerances.d_E"),
            fit_x=raw.get("fit_x", "value"),
            fit_y=raw.get("fit_y", "m_z_mean"),
            fit_x_divisor=raw.get("fit_x_divisor"),
        )


def least_squares_line(x: np.ndarray, y: np.ndarray):
    """Plain least squares with parameter standard errors."""
    if x.size < 3:
        raise FigureError("scaling fit needs at least three points")
    design = np.vstack([x, np.ones_like(x)]).T
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    resid = y - design @ coef
    dof = x.size - 2
    sigma2 = float(resid @ resid) / dof if dof else 0.0
    cov = sigma2 * np.linalg.inv(design.T @ design)
    return (
        float(coef[0]),
        float(coef[1]),
        float(np.sqrt(cov[0, 0])),
        float(np.sqrt(cov[1, 1])),
    )


def _finish(fig, ax, spec: FigureSpec) -> str:
    ax.set_xlabel(spec.x_label)
    ax.set_ylabel(spec.y_label)
    ax.legend(loc="best", fontsize=8)
    out = Path(spec.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out, dpi=150)
    plt.close(fig)
    return str(out)


def _render_trace(spec: FigureSpec) -> dict:
    steps = load_csv(spec.inputs["steps"])
    t = require_column(steps, "t", spec.inputs["steps"])
    series = spec.series or ["m_x"]
    fig, ax = plt.subplots(figsize=(6, 4))
    for name in series:
        ax.plot(t, require_column(steps, name, spec.inputs["steps"]), "o-", ms=3, label=name)
    if "exact" in spec.inputs:
        exact = load_csv(spec.inputs["exact"])
        te = require_column(exact, "t", spec.inputs["exact"])
        for name in series:
            ax.plot(te, require_column(exact, name, spec.inputs["exact"]), "k-", lw=1,
                    label=f"{name} exact")
    return {"panel": "trace", "output": _finish(fig, ax, spec), "n_points": int(t.size)}


def _render_band(spec: FigureSpec) -> dict:
    steps = load_csv(spec.inputs["steps"])
    meta = load_meta(spec.inputs["meta"])
    t = require_column(steps, "t", spec.inputs["steps"])
    values = require_column(steps, spec.band_column, spec.inputs["steps"])
    if spec.band_reference not in meta:
        raise FigureError(f"key {spec.band_reference!r} missing from {spec.inputs['meta']}")
    if spec.band_tolerance not in meta:
        raise FigureError(f"key {spec.band_tolerance!r} missing from {spec.inputs['meta']}")
    ref = float(meta[spec.band_reference])
    tol = float(meta[spec.band_tolerance])
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(t, values, "o-", ms=3, label=spec.band_column)
    lines = []
    ax.axhline(ref, color="k", lw=1, label="reference")
    if math.isfinite(tol):
        for bound in (ref - tol, ref + tol):
            ax.axhline(bound, color="grey", ls="--", lw=1)
            lines.append(bound)
    return {
        "panel": "band",
        "output": _finish(fig, ax, spec),
        "reference": ref,
        "tolerance_lines": lines,
    }


def _render_scaling_fit(spec: FigureSpec) -> dict:
    summary = load_csv(spec.inputs["summary"])
    x = np.array(require_column(summary, spec.fit_x, spec.inputs["summary"]), dtype=float)
    y = np.array(require_column(summary, spec.fit_y, spec.inputs["summary"]), dtype=float)
    if spec.fit_x_divisor:
        x = x / np.array(
            require_column(summary, spec.fit_x_divisor, spec.inputs["summary"]), dtype=float
        )
    slope, intercept, slope_err, intercept_err = least_squares_line(x, y)
    fig, ax = plt.subplots(figsize=(5, 4))
    ax.plot(x, y, "o", label="data")
    grid = np.linspace(x.min(), x.max(), 50)
    ax.plot(grid, slope * grid + intercept, "-", label="least squares")
    print(
        f"scaling_fit: slope={slope:.17g} slope_stderr={slope_err:.17g} "
        f"intercept={intercept:.17g} intercept_stderr={intercept_err:.17g}"
    )
    return {
        "panel": "scaling_fit",
        "output": _finish(fig, ax, spec),
        "slope": slope,
        "intercept": intercept,
        "slope_stderr": slope_err,
        "intercept_stderr": intercept_err,
    }


def _render_gauge_log(spec: FigureSpec) -> dict:
    steps = load_csv(spec.inputs["steps"])
    t = require_column(steps, "t", spec.inputs["steps"])
    fig, ax = plt.subplots(figsize=(6, 4))
    floor = 1e-16
    for name in ("dev_g", "dev_gvar"):
        values = np.array(require_column(steps, name, spec.inputs["steps"]), dtype=float)
        ax.semilogy(t, np.maximum(values, floor), "o-", ms=3, label=name)
    lines = []
    for name in ("tol_g", "tol_gvar"):
        if name in steps:
            values = np.array(steps[name], dtype=float)
            if np.isfinite(values).any():
                level = float(values[np.isfinite(values)][-1])
                ax.axhline(level, ls="--", lw=1, color="grey")
                lines.append(level)
    return {
        "panel": "gauge_log",
        "output": _finish(fig, ax, spec),
        "tolerance_lines": lines,
    }


_RENDERERS = {
    "trace": _render_trace,
    "band": _render_band,
    "scaling_fit": _render_scaling_fit,
    "gauge_log": _render_gauge_log,
}


def render(spec: FigureSpec | str | Path) -> dict:
    if not isinstance(spec, FigureSpec):
        spec = FigureSpec.load(spec)
    return _RENDERERS[spec.panel](spec)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="plots", description="Render figures from adatrotter CSV outputs"
    )
    parser.add_argument("spec", nargs="+", help="figure-spec JSON file(s)")
    args = parser.parse_args(argv)
    try:
        for spec in args.spec:
            info = render(spec)
            print(f"wrote {info['output']}")
    except FigureError as exc:
        print(f"figure error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
