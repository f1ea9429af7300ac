import math

import numpy as np
import pytest
import scipy.linalg

from adatrotter.adaptive import (
    BISECTION,
    SEQUENTIAL,
    Budget,
    Candidate,
    ConstraintSlacks,
    SearchConfig,
    ToleranceSet,
    bisection_search,
    constraint_values,
    reference_moments,
    run_ada_trotter,
    run_fixed_trotter,
    search_step,
    sequential_search,
)
from adatrotter.hilbert import all_down_state, global_y_rotation
from adatrotter.operators import IsingParams, build_ising, magnetization_x
from adatrotter.propagate import trotter_step

from conftest import random_state


def fig2_setup(L=4):
    split = build_ising(IsingParams(j_z=-1, h_x=-1.7, h_z=0.5, L=L))
    psi0 = global_y_rotation(all_down_state(split.space), np.pi / 8)
    return split, psi0


def injected_evaluate(slack_funcs):
    """Search-core test double: candidate slacks from plain scalar functions."""

    def evaluate(dt: float) -> Candidate:
        f_e, f_var = slack_funcs
        fe, fv = f_e(dt), f_var(dt)
        slacks = ConstraintSlacks(
            e_density=0.0,
            var_density=0.0,
            dev_e=0.0,
            dev_var=0.0,
            f_e=fe,
            f_var=fv,
        )
        return Candidate(dt, slacks, None)

    return evaluate


def test_tolerance_validation():
    with pytest.raises(ValueError):
        ToleranceSet(d_e=0.0, d_var=1.0)
    with pytest.raises(ValueError):
        ToleranceSet(d_e=1.0, d_var=1.0, soft_inflation=0.5)
    tol = ToleranceSet(d_e=1.0, d_var=1.0)
    assert tol.d_g == math.inf and not tol.tracks_gauge


def test_constraint_values_initial_state():
    split, psi0 = fig2_setup()
    tol = ToleranceSet(d_e=0.03, d_var=1.0)
    refs = reference_moments(psi0, split.total)
    slacks = constraint_values(psi0, refs, tol, split.total)
    assert slacks.f_e == -0.03
    assert slacks.f_var == -1.0
    assert slacks.satisfied


def test_constraint_values_infinite_tolerance():
    split, psi0 = fig2_setup()
    tol = ToleranceSet(d_e=math.inf, d_var=math.inf)
    refs = reference_moments(psi0, split.total)
    slacks = constraint_values(psi0, refs, tol, split.total)
    assert slacks.f_e == -math.inf
    assert slacks.f_var == -math.inf


def test_constraint_values_rejects_unnormalized():
    split, psi0 = fig2_setup()
    tol = ToleranceSet(d_e=1.0, d_var=1.0)
    refs = reference_moments(psi0, split.total)
    bad = psi0.copy()
    bad.amplitudes *= 1.01
    with pytest.raises(ValueError):
        constraint_values(bad, refs, tol, split.total)


def test_constraint_violation_large_step_matches_dense_oracle():
    # single 0.36 step at L=4 pushes the energy density out of the 0.03 band;
    # the deviation itself is cross-checked against dense factor exponentials
    split, psi0 = fig2_setup(L=4)
    tol = ToleranceSet(d_e=0.03, d_var=1.0)
    refs = reference_moments(psi0, split.total)
    dt = 0.36
    candidate = trotter_step(split, dt, psi0)
    slacks = constraint_values(candidate, refs, tol, split.total)
    assert slacks.f_e > 0

    half = scipy.linalg.expm(-1j * dt / 2 * split.h_plus.matrix.toarray())
    full = scipy.linalg.expm(-1j * dt * split.h_minus.matrix.toarray())
    oracle_state = half @ (full @ (half @ psi0.amplitudes))
    h = split.total.matrix.toarray()
    oracle_dev = abs(
        np.real(oracle_state.conj() @ (h @ oracle_state)) / split.space.L - refs.e_density
    )
    assert slacks.dev_e == pytest.approx(oracle_dev, abs=1e-10)
    assert slacks.f_e == pytest.approx(oracle_dev - 0.03, abs=1e-10)


def test_sequential_search_accepts_t_max_first():
    evaluate = injected_evaluate((lambda dt: -1.0, lambda dt: -1.0))
    cfg = SearchConfig(algorithm=SEQUENTIAL, t_min=0.01, t_max=0.5, dtau=0.1)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=1, d_var=1))
    assert choice.dt == 0.5
    assert choice.attempts == 1
    assert not choice.freeze


def test_sequential_search_decrement_sequence():
    # f(dt) = dt - 0.25: candidates 0.5, 0.4, 0.3, 0.2 -> accepts 0.2
    evaluate = injected_evaluate((lambda dt: dt - 0.25, lambda dt: -1.0))
    cfg = SearchConfig(algorithm=SEQUENTIAL, t_min=0.01, t_max=0.5, dtau=0.1)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=1, d_var=1))
    assert choice.dt == pytest.approx(0.2)
    assert choice.attempts == 4
    assert not choice.freeze


def test_sequential_search_freeze_on_exhaustion():
    evaluate = injected_evaluate((lambda dt: 1.0, lambda dt: -1.0))
    cfg = SearchConfig(algorithm=SEQUENTIAL, t_min=0.01, t_max=0.5, dtau=0.01)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=1, d_var=1))
    assert choice.freeze
    assert choice.dt == cfg.t_min
    assert choice.attempts == cfg.n_max == 49


def test_sequential_resolution_config():
    cfg = SearchConfig(algorithm=SEQUENTIAL, t_min=0.01, t_max=0.5, dtau=0.001)
    assert cfg.n_max == 490


def test_bisection_all_satisfied_returns_near_t_max():
    evaluate = injected_evaluate((lambda dt: -1.0, lambda dt: -1.0))
    cfg = SearchConfig(algorithm=BISECTION, t_min=0.01, t_max=0.5, m_max=30)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=0.1, d_var=0.1))
    assert choice.dt == pytest.approx(0.5, abs=0.01)
    assert not choice.freeze


def test_bisection_converges_to_binding_root():
    # roots at 0.3 (energy) and 0.2 (variance): the binding one is 0.2
    evaluate = injected_evaluate((lambda dt: dt - 0.3, lambda dt: dt - 0.2))
    cfg = SearchConfig(algorithm=BISECTION, t_min=0.01, t_max=0.5, p_e=0.01, p_var=0.01)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=1, d_var=1))
    # scalar-bisection oracle: min of the two roots
    assert choice.dt == pytest.approx(0.2, abs=0.011)
    assert not choice.freeze


def test_bisection_freeze_when_nothing_satisfies():
    evaluate = injected_evaluate((lambda dt: 1.0, lambda dt: -1.0))
    cfg = SearchConfig(algorithm=BISECTION, t_min=0.01, t_max=0.5)
    choice = search_step(evaluate, cfg, ToleranceSet(d_e=1, d_var=1))
    assert choice.freeze
    assert choice.dt == cfg.t_min


def test_search_consistency_between_algorithms():
    # The alternating bisection treats the variance slack first (odd R); when
    # its root is the binding one the two algorithms must agree to within the
    # combined resolution.
    rng = np.random.default_rng(5)
    for _ in range(20):
        root_var = rng.uniform(0.05, 0.4)
        root_e = rng.uniform(root_var, 0.45)
        funcs = (lambda dt, r=root_e: dt - r, lambda dt, r=root_var: dt - r)
        seq_cfg = SearchConfig(algorithm=SEQUENTIAL, dtau=0.001)
        bis_cfg = SearchConfig(algorithm=BISECTION, p_e=0.005, p_var=0.005)
        tol = ToleranceSet(d_e=1, d_var=1)
        seq = search_step(injected_evaluate(funcs), seq_cfg, tol)
        bis = search_step(injected_evaluate(funcs), bis_cfg, tol)
        assert abs(seq.dt - bis.dt) <= max(seq_cfg.dtau, 2 * 0.005) + 1e-9


def test_bisection_suboptimal_when_energy_root_far_below_variance_root():
    # Published pseudocode caveat: the shared bracket shrinks around the
    # variance root first, so a much smaller energy root is never localized.
    # The step choice stays sound (never accepts a violating candidate) but
    # can be far below the optimum, falling back to the smallest step.
    funcs = (lambda dt: dt - 0.1, lambda dt: dt - 0.4)
    cfg = SearchConfig(algorithm=BISECTION, p_e=0.005, p_var=0.005)
    choice = search_step(injected_evaluate(funcs), cfg, ToleranceSet(d_e=1, d_var=1))
    assert choice.candidate.slacks.satisfied
    assert choice.dt <= 0.1 + 0.005


def test_attempt_bounds():
    rng = np.random.default_rng(9)
    tol = ToleranceSet(d_e=1, d_var=1)
    for _ in range(20):
        roots = rng.uniform(-0.2, 0.7, size=2)
        funcs = (lambda dt, r=roots[0]: dt - r, lambda dt, r=roots[1]: dt - r)
        seq_cfg = SearchConfig(algorithm=SEQUENTIAL, dtau=0.01)
        seq = search_step(injected_evaluate(funcs), seq_cfg, tol)
        assert seq.attempts <= seq_cfg.n_max
        bis_cfg = SearchConfig(algorithm=BISECTION, p_e=0.002, p_var=0.002)
        bis = search_step(injected_evaluate(funcs), bis_cfg, tol)
        # core loop bound, plus the initial cross-check at t_max and the
        # feasibility refinement down to the time resolution
        refine = int(np.ceil(np.log2((bis_cfg.t_max - bis_cfg.t_min) / bis_cfg.dtau)))
        assert bis.attempts <= bis_cfg.r_max * bis_cfg.m_max + 1 + refine


def test_search_wrappers_on_states():
    split, psi0 = fig2_setup(L=6)
    tol = ToleranceSet(d_e=0.03, d_var=1.0)
    refs = reference_moments(psi0, split.total)
    cfg = SearchConfig()
    res_b = bisection_search(psi0, split, refs, tol, cfg)
    assert res_b.attempts >= 1
    assert res_b.slacks.satisfied or res_b.freeze
    res_s = sequential_search(psi0, split, refs, tol, SearchConfig(algorithm=SEQUENTIAL, dtau=0.01))
    assert res_s.slacks.satisfied or res_s.freeze
    assert np.linalg.norm(res_s.state.amplitudes) == pytest.approx(1.0, abs=1e-10)


def test_run_infinite_tolerances_matches_fixed_step():
    split, psi0 = fig2_setup(L=5)
    obs = [("m_x", magnetization_x(split.space))]
    dt = 0.3
    tol = ToleranceSet(d_e=math.inf, d_var=math.inf)
    cfg = SearchConfig(algorithm=SEQUENTIAL, t_min=0.01, t_max=dt, dtau=0.01)
    ada = run_ada_trotter(split, psi0, tol, cfg, Budget(max_steps=12), obs)
    fixed = run_fixed_trotter(split, psi0, dt, 12, obs)
    assert all(s.dt == dt and s.attempts == 1 and not s.freeze for s in ada.steps)
    np.testing.assert_allclose(ada.times(), fixed.times(), atol=1e-12)
    np.testing.assert_allclose(
        ada.observable("m_x"), fixed.observable("m_x"), atol=1e-12
    )


def test_run_constraint_soundness_recheck():
    # re-evaluating the stored states reproduces slacks <= 0 bit-stably
    split, psi0 = fig2_setup(L=8)
    tol = ToleranceSet(d_e=0.03, d_var=1.0, soft_inflation=1.0)
    rec = run_ada_trotter(
        split, psi0, tol, SearchConfig(), Budget(max_steps=40), store_states=True
    )
    refs = rec.refs
    assert rec.state_steps == list(range(len(rec.steps)))
    for log, state in zip(rec.steps, rec.states):
        tol_then = ToleranceSet(d_e=log.tol_e, d_var=log.tol_var, soft_inflation=1.0)
        again = constraint_values(state, refs, tol_then, split.total)
        assert again.f_e == log.f_e
        assert again.f_var == log.f_var
        if not log.freeze:
            assert again.f_e <= 0 and again.f_var <= 0


def test_run_time_accumulation_and_budget():
    split, psi0 = fig2_setup(L=4)
    tol = ToleranceSet(d_e=0.05, d_var=0.5)
    rec = run_ada_trotter(split, psi0, tol, SearchConfig(), Budget(max_time=3.0))
    times = rec.times()
    dts = rec.column("dt", include_initial=False)
    np.testing.assert_allclose(np.diff(times), dts, atol=1e-12)
    assert rec.final_time >= 3.0
    assert rec.steps[-2].t < 3.0


def test_soft_inflation_monotone_snapshots():
    # a tolerance too tight to ever satisfy forces freezes and 1.3x inflation
    split, psi0 = fig2_setup(L=6)
    tol = ToleranceSet(d_e=1e-7, d_var=math.inf, soft_inflation=1.3)
    rec = run_ada_trotter(
        split, psi0, tol, SearchConfig(algorithm=SEQUENTIAL, dtau=0.05), Budget(max_steps=12)
    )
    tol_e = rec.column("tol_e", include_initial=False)
    assert (np.diff(tol_e) >= -1e-18).all()
    assert rec.freeze_count > 0
    boosts = tol_e[1:] / tol_e[:-1]
    assert set(np.round(boosts[boosts > 1], 6)) == {1.3}
    # variance tolerance was never violated, so it must not inflate
    assert (rec.column("tol_var", include_initial=False) == math.inf).all()


def test_soft_inflation_disabled_keeps_tolerances_fixed():
    split, psi0 = fig2_setup(L=6)
    tol = ToleranceSet(d_e=1e-7, d_var=math.inf, soft_inflation=1.0)
    rec = run_ada_trotter(
        split, psi0, tol, SearchConfig(algorithm=SEQUENTIAL, dtau=0.05), Budget(max_steps=8)
    )
    assert (rec.column("tol_e", include_initial=False) == 1e-7).all()


def test_fixed_run_zero_steps_keeps_initial_only():
    split, psi0 = fig2_setup(L=4)
    obs = [("m_x", magnetization_x(split.space))]
    rec = run_fixed_trotter(split, psi0, 0.16, 0, obs)
    assert rec.steps == []
    assert rec.final_time == 0.0
    assert "m_x" in rec.initial.observables


def test_fixed_run_reaches_expected_time():
    split, psi0 = fig2_setup(L=4)
    rec = run_fixed_trotter(split, psi0, 0.16, 15)
    assert rec.final_time == pytest.approx(2.4, abs=1e-12)


def test_budget_validation():
    with pytest.raises(ValueError):
        Budget()
    with pytest.raises(ValueError):
        Budget(max_steps=-1)
    with pytest.raises(ValueError):
        Budget(max_time=0.0)


def test_search_config_validation():
    with pytest.raises(ValueError):
        SearchConfig(t_min=0.5, t_max=0.1)
    with pytest.raises(ValueError):
        SearchConfig(dtau=-1.0)
    with pytest.raises(ValueError):
        SearchConfig(algorithm="newton")
