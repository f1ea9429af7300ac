"""Secondary acceptance: band tolerance lines and scaling-fit slope recovery.

Consumes CSVs with the primary CLI's schema only (no imports from the
primary package).
"""

from pathlib import Path

import numpy as np
import pytest

from ada_plots.figures import FigureSpec, render

from test_figures import synth_steps, write_meta, write_summary


def test_secondary_band_tolerance_lines(tmp_path, capsys):
    steps = synth_steps(tmp_path / "steps.csv")
    meta = write_meta(
        tmp_path / "meta.csv",
        [
            ("ref_e_density", "-0.94827011179511231"),
            ("ref_var_density", "1.1920498835462254"),
            ("tolerances.d_E", "0.03"),
            ("tolerances.d_var", "1"),
        ],
    )
    info = render(
        FigureSpec(
            panel="band",
            inputs={"steps": str(steps), "meta": str(meta)},
            output=str(tmp_path / "band.png"),
            band_column="e_density",
            band_reference="ref_e_density",
            band_tolerance="tolerances.d_E",
        )
    )
    ref = -0.94827011179511231
    assert info["tolerance_lines"] == [ref - 0.03, ref + 0.03]
    assert Path(info["output"]).exists()
    print("ACCEPTANCE 12a (band tolerance lines): PASS -", info["tolerance_lines"])


def test_secondary_scaling_fit_matches_independent_least_squares(tmp_path, capsys):
    rng = np.random.default_rng(12)
    xs = np.array([0.0625, 0.1, 0.125, 0.15, 0.1875, 0.25])
    ys = 0.085 * xs + 0.001 + rng.normal(0.0, 0.002, xs.size)
    summary = write_summary(tmp_path / "sweep.csv", xs, ys)
    info = render(
        FigureSpec(
            panel="scaling_fit",
            inputs={"summary": str(summary)},
            output=str(tmp_path / "fit.png"),
            fit_x="value",
            fit_y="m_z_mean",
        )
    )
    printed = capsys.readouterr().out
    slope_printed = float(printed.split("slope=")[1].split()[0])
    intercept_printed = float(printed.split("intercept=")[1].split()[0])

    # independent recomputation through the normal equations
    n = xs.size
    sx, sy = float(xs.sum()), float(ys.sum())
    sxx, sxy = float((xs * xs).sum()), float((xs * ys).sum())
    denom = n * sxx - sx * sx
    slope = (n * sxy - sx * sy) / denom
    intercept = (sy * sxx - sx * sxy) / denom
    assert slope_printed == pytest.approx(slope, abs=1e-10)
    assert intercept_printed == pytest.approx(intercept, abs=1e-10)
    assert info["slope"] == pytest.approx(slope, abs=1e-10)
    print(
        "ACCEPTANCE 12b (scaling-fit slope vs independent least squares): PASS - "
        f"slope={slope:.6f}"
    )
