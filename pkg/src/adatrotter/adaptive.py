"""Adaptive step-size feedback loop with tolerance-bounded conservation laws.

Each accepted step maximizes the split-step size subject to signed slack
functions on energy density, energy-variance density and (optionally) the
site-averaged Gauss-law deviations.  Two search strategies are provided: a
sequential scan from the largest step downwards and an alternating bisection.
When no step satisfies the constraints, the smallest step is accepted, the
violated tolerances are inflated by the soft-constraint factor, and the step
is flagged as frozen.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .hilbert import StateVector
from .operators import SparseOperator, TrotterSplit, apply, moment_root, signed_root
from .propagate import KrylovConfig, trotter_step

SEQUENTIAL = "sequential"
BISECTION = "bisection"


@dataclass
class ToleranceSet:
    """Maximal allowed deviations, per site, from the initial conserved values."""

    d_e: float
    d_var: float
    d_g: Optional[float] = None
    d_gvar: Optional[float] = None
    soft_inflation: float = 1.3

    def __post_init__(self):
        self.d_g = math.inf if self.d_g is None else self.d_g
        self.d_gvar = math.inf if self.d_gvar is None else self.d_gvar
        for name in ("d_e", "d_var", "d_g", "d_gvar"):
            if not getattr(self, name) > 0:
                raise ValueError(f"tolerance {name} must be positive (or infinite)")
        if self.soft_inflation < 1:
            raise ValueError("soft inflation factor must be >= 1")

    @property
    def tracks_gauge(self) -> bool:
        return math.isfinite(self.d_g) or math.isfinite(self.d_gvar)

    def copy(self) -> "ToleranceSet":
        return replace(self)


@dataclass(frozen=True)
class ReferenceMoments:
    """Initial-state conserved quantities the feedback loop pins down."""

    e_density: float
    var_density: float
    gauge_mean: Optional[np.ndarray] = None
    gauge_var: Optional[np.ndarray] = None


def _h_moment_densities(h: SparseOperator, amps: np.ndarray) -> tuple[float, float]:
    w = h.diag * amps if h.diag is not None else h.matrix @ amps
    mean = float(np.real(np.vdot(amps, w)))
    second = float(np.real(np.vdot(w, w)))
    L = h.space.L
    return mean / L, (second - mean * mean) / L


def _gauge_profiles(generators: Sequence[SparseOperator], amps: np.ndarray):
    probs = np.abs(amps) ** 2
    means = np.empty(len(generators))
    variances = np.empty(len(generators))
    for i, g in enumerate(generators):
        if g.diag is None:
            raise ValueError("gauge generators are expected to be diagonal")
        m = float(g.diag @ probs)
        means[i] = m
        variances[i] = float((g.diag * g.diag) @ probs) - m * m
    return means, variances


def reference_moments(
    psi0: StateVector,
    h: SparseOperator,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
) -> ReferenceMoments:
    e, var = _h_moment_densities(h, psi0.amplitudes)
    if gauge_generators is None:
        return ReferenceMoments(e, var)
    means, variances = _gauge_profiles(gauge_generators, psi0.amplitudes)
    return ReferenceMoments(e, var, means, variances)


@dataclass(frozen=True)
class ConstraintSlacks:
    """Signed slacks (negative = satisfied) plus the underlying densities."""

    e_density: float
    var_density: float
    dev_e: float
    dev_var: float
    f_e: float
    f_var: float
    dev_g: Optional[float] = None
    dev_gvar: Optional[float] = None
    f_g: Optional[float] = None
    f_gvar: Optional[float] = None

    @property
    def satisfied(self) -> bool:
        values = [self.f_e, self.f_var]
        if self.f_g is not None:
            values.append(self.f_g)
        if self.f_gvar is not None:
            values.append(self.f_gvar)
        return all(v < 0 for v in values)


def constraint_values(
    psi_candidate: StateVector,
    refs: ReferenceMoments,
    tol: ToleranceSet,
    h: SparseOperator,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
) -> ConstraintSlacks:
    """Slack functions of the candidate state; negative values mean satisfied."""
    amps = psi_candidate.amplitudes
    n = np.linalg.norm(amps)
    if abs(n - 1.0) > 1e-6:
        raise ValueError(f"candidate state is not normalized (norm {n})")
    e, var = _h_moment_densities(h, amps)
    dev_e = abs(e - refs.e_density)
    dev_var = abs(var - refs.var_density)
    slacks = {
        "e_density": e,
        "var_density": var,
        "dev_e": dev_e,
        "dev_var": dev_var,
        "f_e": dev_e - tol.d_e,
        "f_var": dev_var - tol.d_var,
    }
    if tol.tracks_gauge and (gauge_generators is None or refs.gauge_mean is None):
        raise ValueError("finite gauge tolerances require gauge generators and references")
    if gauge_generators is not None and refs.gauge_mean is not None:
        means, variances = _gauge_profiles(gauge_generators, amps)
        dev_g = float(np.mean(np.abs(means - refs.gauge_mean)))
        dev_gvar = float(np.mean(np.abs(variances - refs.gauge_var)))
        slacks.update(
            dev_g=dev_g,
            dev_gvar=dev_gvar,
            f_g=dev_g - tol.d_g,
            f_gvar=dev_gvar - tol.d_gvar,
        )
    return ConstraintSlacks(**slacks)


# ---------------------------------------------------------------------------
# Search configuration and cores
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SearchConfig:
    algorithm: str = BISECTION
    t_min: float = 0.01
    t_max: float = 0.5
    dtau: float = 0.001
    p_e: Optional[float] = None
    p_var: Optional[float] = None
    m_max: int = 12
    r_max: int = 8

    def __post_init__(self):
        if self.algorithm not in (SEQUENTIAL, BISECTION):
            raise ValueError(f"unknown search algorithm {self.algorithm!r}")
        if not 0 < self.t_min < self.t_max:
            raise ValueError("need 0 < t_min < t_max")
        if self.dtau <= 0:
            raise ValueError("sequential resolution must be positive")
        if self.m_max < 1 or self.r_max < 1:
            raise ValueError("iteration caps must be at least 1")
        for p in (self.p_e, self.p_var):
            if p is not None and p <= 0:
                raise ValueError("bisection precisions must be positive")

    @property
    def n_max(self) -> int:
        return max(1, int(round((self.t_max - self.t_min) / self.dtau)))

    def precisions(self, tol: ToleranceSet) -> tuple[float, float]:
        # Default precision is a tenth of the matching tolerance.
        p_e = self.p_e if self.p_e is not None else tol.d_e / 10
        p_var = self.p_var if self.p_var is not None else tol.d_var / 10
        return p_e, p_var


@dataclass
class Candidate:
    dt: float
    slacks: ConstraintSlacks
    payload: object  # the propagated state (or trajectory ensemble) at dt


@dataclass
class StepChoice:
    dt: float
    attempts: int
    freeze: bool
    candidate: Candidate


class _Evaluator:
    """Caches candidate evaluations per search and tracks the best feasible one.

    The freeze-anchoring evaluation at t_min is not a search attempt, so
    callers may pass count=False for it.
    """

    def __init__(self, evaluate: Callable[[float], Candidate]):
        self._evaluate = evaluate
        self._cache: dict[float, Candidate] = {}
        self.attempts = 0
        self.best_feasible: Optional[Candidate] = None

    def __call__(self, dt: float, count: bool = True) -> Candidate:
        cand = self._cache.get(dt)
        if cand is None:
            cand = self._evaluate(dt)
            self._cache[dt] = cand
            if count:
                self.attempts += 1
            if cand.slacks.satisfied and (
                self.best_feasible is None or cand.dt > self.best_feasible.dt
            ):
                self.best_feasible = cand
        return cand


def sequential_core(evaluator: _Evaluator, cfg: SearchConfig) -> tuple[float, bool, Candidate]:
    """Scan from t_max downwards; on exhaustion return t_min with freeze."""
    for n in range(cfg.n_max):
        dt = cfg.t_max - n * cfg.dtau
        if dt < cfg.t_min - 1e-12:
            break
        cand = evaluator(dt)
        if cand.slacks.satisfied:
            return dt, False, cand
    cand = evaluator(cfg.t_min, count=False)
    return cfg.t_min, True, cand


def bisection_core(
    evaluator: _Evaluator, cfg: SearchConfig, p_e: float, p_var: float
) -> tuple[float, Candidate]:
    """Alternating root search in the energy (R even) and variance (R odd) slacks.

    Mirrors the published pseudocode: candidate slacks at t_min are assumed
    negative, the cross-check breaks after two consecutive passes, and each
    inner halving loop is capped at m_max iterations.
    """
    t_lo, t_hi = cfg.t_min, cfg.t_max
    t_mid = cfg.t_max
    lo_f_e = lo_f_var = -1.0
    r = 1
    while r <= cfg.r_max:
        use_var = r % 2 == 1
        p = p_var if use_var else p_e
        cand = evaluator(t_mid)
        f_mid = cand.slacks.f_var if use_var else cand.slacks.f_e
        if f_mid < p and r != 1:
            break
        m = 1
        while m <= cfg.m_max:
            t_mid = 0.5 * (t_lo + t_hi)
            cand = evaluator(t_mid)
            f_mid = cand.slacks.f_var if use_var else cand.slacks.f_e
            if abs(f_mid) < p:
                t_hi = t_mid
                break
            f_lo = lo_f_var if use_var else lo_f_e
            if (f_mid < 0) == (f_lo < 0):
                t_lo = t_mid
                lo_f_e, lo_f_var = cand.slacks.f_e, cand.slacks.f_var
            else:
                t_hi = t_mid
            m += 1
        r += 1
    return t_mid, evaluator(t_mid)


def search_step(
    evaluate: Callable[[float], Candidate], cfg: SearchConfig, tol: ToleranceSet
) -> StepChoice:
    """Run the configured search and normalize the outcome to a sound step.

    Freeze steps are re-anchored at exactly t_min.  A bisection result whose
    slacks ended slightly positive (the root search works to precision p) is
    replaced by the largest feasible candidate already evaluated, keeping the
    accepted-step guarantee without extra propagations.
    """
    evaluator = _Evaluator(evaluate)
    if cfg.algorithm == SEQUENTIAL:
        dt, freeze, cand = sequential_core(evaluator, cfg)
        return StepChoice(dt, evaluator.attempts, freeze, cand)

    p_e, p_var = cfg.precisions(tol)
    t_mid, cand = bisection_core(evaluator, cfg, p_e, p_var)
    # One time-resolution unit above t_min counts as pinned at the bottom.
    margin = max(cfg.dtau, (cfg.t_max - cfg.t_min) * 2.0**-cfg.m_max)
    if t_mid > cfg.t_min + margin:
        if cand.slacks.satisfied:
            return StepChoice(t_mid, evaluator.attempts, False, cand)
        # The root search works to precision p, so the returned point can sit
        # just past the feasibility boundary; halve down to it from below so
        # the accepted step never carries a positive slack.
        lo = evaluator.best_feasible.dt if evaluator.best_feasible else cfg.t_min
        hi = t_mid
        while hi - lo > cfg.dtau:
            probe = 0.5 * (lo + hi)
            if evaluator(probe).slacks.satisfied:
                lo = probe
            else:
                hi = probe
        best = evaluator.best_feasible
        if best is not None and best.dt > cfg.t_min + margin:
            return StepChoice(best.dt, evaluator.attempts, False, best)
    cand = evaluator(cfg.t_min, count=False)
    return StepChoice(cfg.t_min, evaluator.attempts, True, cand)


@dataclass
class SearchResult:
    dt: float
    attempts: int
    freeze: bool
    slacks: ConstraintSlacks
    state: StateVector


def _state_evaluator(psi, split, refs, tol, gauge_generators, krylov):
    def evaluate(dt: float) -> Candidate:
        candidate_state = trotter_step(split, dt, psi, krylov)
        slacks = constraint_values(candidate_state, refs, tol, split.total, gauge_generators)
        return Candidate(dt, slacks, candidate_state)

    return evaluate


def sequential_search(
    psi: StateVector,
    split: TrotterSplit,
    refs: ReferenceMoments,
    tol: ToleranceSet,
    cfg: SearchConfig,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
    krylov: Optional[KrylovConfig] = None,
) -> SearchResult:
    choice = search_step(
        _state_evaluator(psi, split, refs, tol, gauge_generators, krylov),
        replace(cfg, algorithm=SEQUENTIAL),
        tol,
    )
    return SearchResult(
        choice.dt, choice.attempts, choice.freeze, choice.candidate.slacks, choice.candidate.payload
    )


def bisection_search(
    psi: StateVector,
    split: TrotterSplit,
    refs: ReferenceMoments,
    tol: ToleranceSet,
    cfg: SearchConfig,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
    krylov: Optional[KrylovConfig] = None,
) -> SearchResult:
    choice = search_step(
        _state_evaluator(psi, split, refs, tol, gauge_generators, krylov),
        replace(cfg, algorithm=BISECTION),
        tol,
    )
    return SearchResult(
        choice.dt, choice.attempts, choice.freeze, choice.candidate.slacks, choice.candidate.payload
    )


# ---------------------------------------------------------------------------
# Run records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Budget:
    max_steps: Optional[int] = None
    max_time: Optional[float] = None

    def __post_init__(self):
        if self.max_steps is None and self.max_time is None:
            raise ValueError("budget needs max_steps and/or max_time")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be non-negative")
        if self.max_time is not None and self.max_time <= 0:
            raise ValueError("max_time must be positive")

    def exhausted(self, n_steps: int, t: float) -> bool:
        if self.max_steps is not None and n_steps >= self.max_steps:
            return True
        if self.max_time is not None and t >= self.max_time - 1e-12:
            return True
        return False


@dataclass
class StepLog:
    t: float
    dt: float
    attempts: int
    freeze: bool
    e_density: float
    var_density: float
    dev_e: float
    dev_var: float
    f_e: float
    f_var: float
    tol_e: float
    tol_var: float
    dev_g: Optional[float] = None
    dev_gvar: Optional[float] = None
    f_g: Optional[float] = None
    f_gvar: Optional[float] = None
    tol_g: Optional[float] = None
    tol_gvar: Optional[float] = None
    moments: dict = field(default_factory=dict)
    observables: dict = field(default_factory=dict)


@dataclass
class RunRecord:
    L: int
    refs: ReferenceMoments
    initial: StepLog
    steps: list[StepLog] = field(default_factory=list)
    states: Optional[list[StateVector]] = None  # stored states (see state_steps)
    state_steps: list[int] = field(default_factory=list)  # indices into `steps`

    def logs(self, include_initial: bool = True) -> list[StepLog]:
        return ([self.initial] if include_initial else []) + self.steps

    def times(self, include_initial: bool = True) -> np.ndarray:
        return np.array([s.t for s in self.logs(include_initial)])

    def column(self, name: str, include_initial: bool = True) -> np.ndarray:
        return np.array(
            [getattr(s, name) for s in self.logs(include_initial)], dtype=float
        )

    def observable(self, name: str, include_initial: bool = True) -> np.ndarray:
        return np.array([s.observables[name] for s in self.logs(include_initial)])

    def moment(self, n: int, include_initial: bool = True) -> np.ndarray:
        return np.array([s.moments[n] for s in self.logs(include_initial)])

    @property
    def final_time(self) -> float:
        return self.steps[-1].t if self.steps else 0.0

    @property
    def freeze_count(self) -> int:
        return sum(1 for s in self.steps if s.freeze)

    @property
    def mean_attempts(self) -> float:
        if not self.steps:
            return 0.0
        return float(np.mean([s.attempts for s in self.steps]))


def _snapshot(
    t: float,
    dt: float,
    attempts: int,
    freeze: bool,
    slacks: ConstraintSlacks,
    tol: ToleranceSet,
    h: SparseOperator,
    psi: StateVector,
    observables,
    record_moments,
) -> StepLog:
    moments = {
        n: signed_root(moment_root(h, psi, n), n) / h.space.L for n in record_moments
    }
    obs = {
        name: float(np.real(np.vdot(psi.amplitudes, apply(op, psi).amplitudes)))
        for name, op in observables
    }
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
        tol_e=tol.d_e,
        tol_var=tol.d_var,
        dev_g=slacks.dev_g,
        dev_gvar=slacks.dev_gvar,
        f_g=slacks.f_g,
        f_gvar=slacks.f_gvar,
        tol_g=tol.d_g if slacks.dev_g is not None else None,
        tol_gvar=tol.d_gvar if slacks.dev_g is not None else None,
        moments=moments,
        observables=obs,
    )


def _inflate_violated(tol: ToleranceSet, slacks: ConstraintSlacks) -> None:
    # Soft constraint: only tolerances whose slack came out positive inflate,
    # permanently, by the configured factor.
    if slacks.f_e > 0:
        tol.d_e *= tol.soft_inflation
    if slacks.f_var > 0:
        tol.d_var *= tol.soft_inflation
    if slacks.f_g is not None and slacks.f_g > 0:
        tol.d_g *= tol.soft_inflation
    if slacks.f_gvar is not None and slacks.f_gvar > 0:
        tol.d_gvar *= tol.soft_inflation


def run_ada_trotter(
    split: TrotterSplit,
    psi0: StateVector,
    tol: ToleranceSet,
    cfg: SearchConfig,
    budget: Budget,
    observables: Sequence[tuple[str, SparseOperator]] = (),
    *,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
    record_moments: Sequence[int] = (),
    krylov: Optional[KrylovConfig] = None,
    store_states: bool = False,
    store_states_after: float = 0.0,
    store_states_stride: int = 1,
) -> RunRecord:
    """Feedback loop: search the largest admissible step, accept, advance, log.

    Every non-freeze accepted step has all recorded slacks <= 0 under the
    tolerance snapshot in force at acceptance; freeze steps take t_min and
    inflate the violated tolerances for all future searches.  Stored states
    (optional) can be restricted to late times and thinned by a stride.
    """
    if tol.tracks_gauge and gauge_generators is None:
        raise ValueError("finite gauge tolerances require gauge generators")
    gens = gauge_generators
    refs = reference_moments(psi0, split.total, gens)
    tol_now = tol.copy()

    slacks0 = constraint_values(psi0, refs, tol_now, split.total, gens)
    record = RunRecord(
        L=split.space.L,
        refs=refs,
        initial=_snapshot(
            0.0, 0.0, 0, False, slacks0, tol_now, split.total, psi0, observables, record_moments
        ),
        states=[] if store_states else None,
    )

    psi = psi0
    t = 0.0
    while not budget.exhausted(len(record.steps), t):
        choice = search_step(
            _state_evaluator(psi, split, refs, tol_now, gens, krylov), cfg, tol_now
        )
        psi = choice.candidate.payload
        t += choice.dt
        record.steps.append(
            _snapshot(
                t,
                choice.dt,
                choice.attempts,
                choice.freeze,
                choice.candidate.slacks,
                tol_now,
                split.total,
                psi,
                observables,
                record_moments,
            )
        )
        if store_states and t >= store_states_after and (len(record.steps) - 1) % store_states_stride == 0:
            record.states.append(psi)
            record.state_steps.append(len(record.steps) - 1)
        if choice.freeze:
            _inflate_violated(tol_now, choice.candidate.slacks)
    return record


def run_fixed_trotter(
    split: TrotterSplit,
    psi0: StateVector,
    dt: float,
    n_steps: int,
    observables: Sequence[tuple[str, SparseOperator]] = (),
    *,
    tol: Optional[ToleranceSet] = None,
    gauge_generators: Optional[Sequence[SparseOperator]] = None,
    record_moments: Sequence[int] = (),
    krylov: Optional[KrylovConfig] = None,
    store_states: bool = False,
) -> RunRecord:
    """Uniform-step baseline with the same per-step logging as the adaptive run."""
    if dt <= 0:
        raise ValueError("fixed step size must be positive")
    tol_now = tol.copy() if tol is not None else ToleranceSet(math.inf, math.inf)
    gens = gauge_generators
    refs = reference_moments(psi0, split.total, gens)
    slacks0 = constraint_values(psi0, refs, tol_now, split.total, gens)
    record = RunRecord(
        L=split.space.L,
        refs=refs,
        initial=_snapshot(
            0.0, 0.0, 0, False, slacks0, tol_now, split.total, psi0, observables, record_moments
        ),
        states=[] if store_states else None,
    )
    psi = psi0
    t = 0.0
    for _ in range(n_steps):
        psi = trotter_step(split, dt, psi, krylov)
        t += dt
        slacks = constraint_values(psi, refs, tol_now, split.total, gens)
        record.steps.append(
            _snapshot(
                t, dt, 1, False, slacks, tol_now, split.total, psi, observables, record_moments
            )
        )
        if store_states:
            record.states.append(psi)
            record.state_steps.append(len(record.steps) - 1)
    return record
