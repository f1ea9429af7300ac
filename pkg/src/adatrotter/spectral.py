"""Exact diagonalization and thermalization-based analysis at desk scale.

Covers the diagonal-ensemble and microcanonical predictions for long-time
observables, the perturbative estimate of the adaptive-run error in terms of
the energy and variance tolerances, long-time averaging, spectral weight
distributions, Gaussian-filtered initial states and the variance-density scan
over product-state families.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .hilbert import SpaceDescriptor, StateVector
from .operators import SparseOperator

ED_MAX_DIM = 4096


@dataclass
class EigenDecomposition:
    space: SpaceDescriptor
    eigenvalues: np.ndarray  # ascending
    eigenvectors: np.ndarray  # columns

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size


def dense_diagonalize(op: SparseOperator) -> EigenDecomposition:
    """Full dense eigendecomposition (dimension-capped)."""
    if op.dimension > ED_MAX_DIM:
        raise ValueError(f"dense diagonalization capped at dimension {ED_MAX_DIM}")
    w, v = op.eigh_cache()
    return EigenDecomposition(op.space, w, v)


def eigenstate_expectations(ed: EigenDecomposition, op: SparseOperator) -> np.ndarray:
    """Diagonal matrix elements <m|O|m> for every eigenstate."""
    w = op.matrix @ ed.eigenvectors
    if np.isrealobj(ed.eigenvectors) and np.iscomplexobj(w):
        return np.real(np.einsum("im,im->m", ed.eigenvectors, w.real))
    return np.real(np.einsum("im,im->m", ed.eigenvectors.conj(), w))


def overlaps(ed: EigenDecomposition, psi: StateVector) -> np.ndarray:
    """c_m = <m|psi>."""
    if np.isrealobj(ed.eigenvectors):
        return ed.eigenvectors.T @ psi.amplitudes
    return ed.eigenvectors.conj().T @ psi.amplitudes


def diagonal_ensemble(ed: EigenDecomposition, psi0: StateVector, op: SparseOperator) -> float:
    """Infinite-time average prediction: sum_m |c_m|^2 <m|O|m>."""
    weights = np.abs(overlaps(ed, psi0)) ** 2
    return float(weights @ eigenstate_expectations(ed, op))


def microcanonical(
    ed: EigenDecomposition,
    op: SparseOperator,
    energy: float,
    half_width: float,
    o_mm: Optional[np.ndarray] = None,
) -> float:
    """Mean eigenstate expectation over the window [energy - hw, energy + hw]."""
    lo = np.searchsorted(ed.eigenvalues, energy - half_width, side="left")
    hi = np.searchsorted(ed.eigenvalues, energy + half_width, side="right")
    if hi <= lo:
        raise ValueError(
            f"no eigenstates inside [{energy - half_width}, {energy + half_width}]"
        )
    if o_mm is None:
        o_mm = eigenstate_expectations(ed, op)
    return float(np.mean(o_mm[lo:hi]))


class MicrocanonicalCurve:
    """O(energy density) with an adaptively widened window.

    The default half-width is 0.05*L in total energy; windows are widened
    geometrically until they hold at least `min_states` eigenstates so the
    local average stays meaningful where the spectrum thins out.
    """

    def __init__(
        self,
        ed: EigenDecomposition,
        op: SparseOperator,
        L: int,
        half_width: Optional[float] = None,
        min_states: int = 20,
    ):
        self.ed = ed
        self.L = L
        self.half_width = 0.05 * L if half_width is None else half_width
        self.min_states = min(min_states, ed.dimension)
        self.o_mm = eigenstate_expectations(ed, op)

    def __call__(self, e_density: float) -> float:
        energy = e_density * self.L
        hw = self.half_width
        spread = self.ed.eigenvalues[-1] - self.ed.eigenvalues[0]
        while True:
            lo = np.searchsorted(self.ed.eigenvalues, energy - hw, side="left")
            hi = np.searchsorted(self.ed.eigenvalues, energy + hw, side="right")
            if hi - lo >= self.min_states or hw > spread:
                break
            hw *= 1.5
        if hi <= lo:
            raise ValueError(f"no eigenstates near energy density {e_density}")
        return float(np.mean(self.o_mm[lo:hi]))


def curve_derivatives(
    curve: Callable[[float], float], e_density: float, spacing: float
) -> tuple[float, float, float]:
    """Central-difference first, second and third derivatives of the curve."""
    f = [curve(e_density + k * spacing) for k in (-2, -1, 0, 1, 2)]
    d1 = (f[3] - f[1]) / (2 * spacing)
    d2 = (f[3] - 2 * f[2] + f[1]) / spacing**2
    d3 = (f[4] - 2 * f[3] + 2 * f[1] - f[0]) / (2 * spacing**3)
    return d1, d2, d3


def error_expansion_prediction(
    curve: Callable[[float], float],
    e_density: float,
    d_e: float,
    d_var: float,
    L: int,
    spacing: float = 0.1,
) -> float:
    """Predicted long-time observable shift for tolerance-saturated dynamics.

    First-order in the energy tolerance plus the curvature terms from the
    energy and variance shifts: d_e*O' + (d_e^2/2)*O'' + (d_var/(2L))*O''.
    """
    d1, d2, _ = curve_derivatives(curve, e_density, spacing)
    return d_e * d1 + 0.5 * d_e**2 * d2 + d_var / (2 * L) * d2


@dataclass(frozen=True)
class AveragingWindow:
    t_start: float
    t_end: float
    n_samples: Optional[int] = None

    def __post_init__(self):
        if self.t_end <= self.t_start:
            raise ValueError("window must have t_end > t_start")

    def sample_times(self) -> np.ndarray:
        if self.n_samples is None:
            raise ValueError("window has no sample count")
        return np.linspace(self.t_start, self.t_end, self.n_samples)


def long_time_average(
    times: np.ndarray, values: np.ndarray, window: AveragingWindow
) -> tuple[float, float]:
    """Unweighted mean and population standard deviation inside the window."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    mask = (times >= window.t_start) & (times <= window.t_end)
    if mask.sum() < 2:
        raise ValueError("need at least two samples inside the averaging window")
    selected = values[mask]
    return float(np.mean(selected)), float(np.std(selected))


def energy_distribution(
    ed: EigenDecomposition, psi: StateVector
) -> tuple[np.ndarray, np.ndarray]:
    """Spectral weights P_alpha = |<alpha|psi>|^2 over the eigenbasis."""
    weights = np.abs(overlaps(ed, psi)) ** 2
    return ed.eigenvalues.copy(), weights


def filtered_state(
    ed: EigenDecomposition, centers: Sequence[float], width: float
) -> StateVector:
    """Normalized sum over eigenstates with Gaussian weights around the centers."""
    if width <= 0:
        raise ValueError("filter width must be positive")
    if not centers:
        raise ValueError("need at least one filter center")
    weights = np.zeros(ed.dimension)
    for center in centers:
        weights += np.exp(-((ed.eigenvalues - center) ** 2) / (2 * width**2))
    total = np.linalg.norm(weights)
    if total < 1e-300:
        raise ValueError("all filter weights underflowed; widen the filter")
    amps = ed.eigenvectors @ (weights / total)
    return StateVector(ed.space, amps.astype(np.complex128))


def variance_bound_scan(
    make_state: Callable[[int, float], StateVector],
    make_h: Callable[[int], SparseOperator],
    thetas: Sequence[float],
    Ls: Sequence[int],
) -> np.ndarray:
    """Variance densities (<H^2> - <H>^2)/L over a (L, theta) family of states."""
    from .adaptive import _h_moment_densities

    out = np.empty((len(Ls), len(thetas)))
    for i, L in enumerate(Ls):
        h = make_h(L)
        for k, theta in enumerate(thetas):
            psi = make_state(L, theta)
            out[i, k] = _h_moment_densities(h, psi.amplitudes)[1]
    return out
