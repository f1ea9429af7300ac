"""Stochastic-trajectory emulation of gate imperfections and weak dissipation.

Each Trotter step of each trajectory draws fresh site-resolved coupling
offsets, uniform within gamma-scaled windows around the clean values.  The
adaptive step size is shared across the ensemble and chosen so that the
noise-averaged energy and variance densities satisfy the usual constraints;
individual trajectories may violate them and are recorded, not enforced.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .adaptive import (
    Budget,
    Candidate,
    ConstraintSlacks,
    ReferenceMoments,
    RunRecord,
    SearchConfig,
    StepLog,
    ToleranceSet,
    _h_moment_densities,
    reference_moments,
    _inflate_violated,
    search_step,
)
from .hilbert import StateVector
from .operators import (
    IsingParams,
    SparseOperator,
    TrotterSplit,
    apply,
    build_ising,
    ising_split_from_fields,
    moment_root,
    nearest_neighbor_bonds,
    signed_root,
)
from .propagate import KrylovConfig, trotter_step


@dataclass(frozen=True)
class NoiseParams:
    gamma: float
    s_max: int
    seed: int
    reuse_noise_per_step: bool = False

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("noise strength must be non-negative")
        if self.s_max < 1:
            raise ValueError("need at least one trajectory")


@dataclass
class TrajectoryEnsemble:
    states: list[StateVector]
    rngs: list[np.random.Generator]
    t: float = 0.0


def sample_step_hamiltonians(
    base: IsingParams, gamma: float, rng: np.random.Generator
) -> TrotterSplit:
    """One random realization of the split: couplings and fields offset uniformly.

    Offsets are drawn site-ascending (bonds, then z fields, then x fields) from
    gamma*[-|value|, |value|]; gamma = 0 reproduces the clean split exactly.
    """
    if math.isfinite(base.alpha):
        raise ValueError("random gate imperfections are defined for the nearest-neighbor model")
    if base.disorder is not None:
        raise ValueError("static disorder and per-step noise are separate mechanisms")
    space = base.space
    bonds = nearest_neighbor_bonds(base.L, base.boundary)
    couplings = base.j_z + rng.uniform(
        -gamma * abs(base.j_z), gamma * abs(base.j_z), size=len(bonds)
    )
    hz = base.h_z + rng.uniform(-gamma * abs(base.h_z), gamma * abs(base.h_z), size=base.L)
    hx = base.h_x + rng.uniform(-gamma * abs(base.h_x), gamma * abs(base.h_x), size=base.L)
    return ising_split_from_fields(space, bonds, couplings, hz, hx)


def ensemble_moments(states, h: SparseOperator) -> tuple[float, float]:
    """Noise-averaged densities: mean energy and mean per-trajectory variance."""
    if isinstance(states, TrajectoryEnsemble):
        states = states.states
    if not states:
        raise ValueError("ensemble is empty")
    es, vs = zip(*(_h_moment_densities(h, s.amplitudes) for s in states))
    return float(np.mean(es)), float(np.mean(vs))


@dataclass
class NoisyRunResult:
    """Ensemble-averaged record plus per-trajectory energy/variance traces."""

    record: RunRecord
    trajectory_energy: np.ndarray  # (n_logs, s_max), densities, row 0 = initial
    trajectory_variance: np.ndarray


def _ensemble_slacks(
    e_arr: np.ndarray, v_arr: np.ndarray, refs: ReferenceMoments, tol: ToleranceSet
) -> ConstraintSlacks:
    e_bar = float(np.mean(e_arr))
    v_bar = float(np.mean(v_arr))
    dev_e = abs(e_bar - refs.e_density)
    dev_var = abs(v_bar - refs.var_density)
    return ConstraintSlacks(
        e_density=e_bar,
        var_density=v_bar,
        dev_e=dev_e,
        dev_var=dev_var,
        f_e=dev_e - tol.d_e,
        f_var=dev_var - tol.d_var,
    )


def run_noisy_ada_trotter(
    base: IsingParams,
    psi0: StateVector,
    noise: NoiseParams,
    tol: ToleranceSet,
    cfg: SearchConfig,
    budget: Budget,
    observables: Sequence[tuple[str, SparseOperator]] = (),
    *,
    record_moments: Sequence[int] = (),
    krylov: Optional[KrylovConfig] = None,
) -> NoisyRunResult:
    """Shared adaptive step over an ensemble of noisy trajectories.

    Candidate evaluations propagate every trajectory with freshly sampled
    splits (redrawn per candidate unless `reuse_noise_per_step`); the clean
    Hamiltonian stays the conserved target.
    """
    if tol.tracks_gauge:
        raise ValueError("gauge constraints are not defined for the noisy Ising runs")
    clean = build_ising(base)
    h = clean.total
    refs = reference_moments(psi0, h)
    tol_now = tol.copy()
    rngs = [np.random.default_rng(ss) for ss in np.random.SeedSequence(noise.seed).spawn(noise.s_max)]
    ensemble = TrajectoryEnsemble([psi0.copy() for _ in range(noise.s_max)], rngs)

    def per_traj_moments(states):
        pairs = [_h_moment_densities(h, s.amplitudes) for s in states]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def snapshot(t, dt, attempts, freeze, slacks, states) -> StepLog:
        obs = {}
        for name, op in observables:
            vals = [float(np.real(np.vdot(s.amplitudes, apply(op, s).amplitudes))) for s in states]
            obs[name] = float(np.mean(vals))
        moments = {}
        for n in record_moments:
            vals = [moment_root(h, s, n) for s in states]
            moments[n] = signed_root(float(np.mean(vals)), n) / base.L
        return StepLog(
            t=t,
            dt=dt,
            attempts=attempts,
            freeze=freeze,
            e_density=slacks.e_density,
            var_density=slacks.var_density,
            dev_e=slacks.dev_e,
            dev_var=slacks.dev_var,
            f_e=slacks.f_e,
            f_var=slacks.f_var,
            tol_e=tol_now.d_e,
            tol_var=tol_now.d_var,
            moments=moments,
            observables=obs,
        )

    e0, v0 = per_traj_moments(ensemble.states)
    slacks0 = _ensemble_slacks(e0, v0, refs, tol_now)
    record = RunRecord(
        L=base.L,
        refs=refs,
        initial=snapshot(0.0, 0.0, 0, False, slacks0, ensemble.states),
    )
    traj_e = [e0]
    traj_v = [v0]

    while not budget.exhausted(len(record.steps), ensemble.t):
        step_splits: Optional[list[TrotterSplit]] = None
        if noise.reuse_noise_per_step:
            step_splits = [
                sample_step_hamiltonians(base, noise.gamma, rng) for rng in ensemble.rngs
            ]

        def evaluate(dt: float) -> Candidate:
            splits = step_splits or [
                sample_step_hamiltonians(base, noise.gamma, rng) for rng in ensemble.rngs
            ]
            states = [
                trotter_step(split_s, dt, state_s, krylov)
                for split_s, state_s in zip(splits, ensemble.states)
            ]
            e_arr, v_arr = per_traj_moments(states)
            return Candidate(dt, _ensemble_slacks(e_arr, v_arr, refs, tol_now), (states, e_arr, v_arr))

        choice = search_step(evaluate, cfg, tol_now)
        states, e_arr, v_arr = choice.candidate.payload
        ensemble.states = states
        ensemble.t += choice.dt
        record.steps.append(
            snapshot(
                ensemble.t, choice.dt, choice.attempts, choice.freeze, choice.candidate.slacks, states
            )
        )
        traj_e.append(e_arr)
        traj_v.append(v_arr)
        if choice.freeze:
            _inflate_violated(tol_now, choice.candidate.slacks)

    return NoisyRunResult(record, np.array(traj_e), np.array(traj_v))
