import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from seqmis.schedule import (
    BudgetExhausted,
    ContractError,
    Level,
    Schedule,
    is_terminated,
    log_beta,
    mean_beta,
    solve_next_r,
)

LEVEL0 = Level(0, -math.inf, -math.inf, -math.inf, 1.0, 0.0)


def test_log_beta_examples():
    assert log_beta(np.array([5.0]), -math.inf, 3.0)[0] == 0.0
    assert log_beta(np.array([1.0]), -math.inf, 3.0)[0] == -2.0
    assert log_beta(np.array([1.0]), 0.0, 3.0)[0] == -2.0
    with pytest.raises(ContractError):
        log_beta(np.array([1.0]), 3.0, 0.0)


@settings(max_examples=300, deadline=None)
@given(st.floats(-50, 50), st.floats(-50, 50), st.floats(0, 20))
def test_beta_in_unit_interval(lnL, prev, gap):
    b = math.exp(log_beta(np.array([lnL]), prev, prev + gap)[0])
    assert 0.0 < b <= 1.0


def test_two_point_solve():
    # 0.5 (1 + e^-5 / r) = p with p = (1 + e^-1)/2 gives r = e^-4
    p = 0.5 * (1 + math.exp(-1))
    sol = solve_next_r(np.array([0.0, -5.0]), LEVEL0, 0.0, p, tol=1e-12)
    assert sol.ln_r == pytest.approx(-4.0, abs=1e-6)
    assert not sol.at_boundary


def test_four_point_boundary():
    lnL = np.array([0.0, -1.0, -2.0, -3.0])
    mb1 = (1 + math.exp(-1) + math.exp(-2) + math.exp(-3)) / 4
    assert mean_beta(lnL, -math.inf, 0.0) == pytest.approx(mb1, rel=1e-15)
    sol = solve_next_r(lnL, LEVEL0, 0.0, mb1 - 1e-9, tol=1e-6)
    assert sol.ln_r == pytest.approx(0.0, abs=1e-5)
    clamped = solve_next_r(lnL, LEVEL0, 0.0, 0.5 * mb1)
    assert clamped.ln_r == 0.0 and clamped.at_boundary


def test_degenerate_batch():
    sol = solve_next_r(np.full(10, 2.5), LEVEL0, 2.5, 0.1)
    assert sol.ln_r == 0.0 and sol.at_boundary and sol.mean_beta == 1.0


def test_empty_batch():
    with pytest.raises(ContractError):
        solve_next_r(np.array([]), LEVEL0, 0.0, 0.1)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 0), min_size=2, max_size=40), st.floats(0.05, 0.9))
def test_solver_hits_target_or_boundary(lnL, p):
    lnL = np.array(lnL)
    sol = solve_next_r(lnL, LEVEL0, float(lnL.max()), p, tol=1e-6)
    assert sol.ln_r <= 0.0
    if not sol.at_boundary:
        assert abs(sol.mean_beta - p) <= 1e-6 or sol.mean_beta > p


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-30, 0), min_size=1, max_size=30), st.floats(-40, -1))
def test_mean_beta_monotone_in_r(lnL, prev):
    lnL = np.array(lnL)
    grid = np.linspace(prev, 0.0, 60)
    vals = [mean_beta(lnL, prev, g) for g in grid]
    assert all(b <= a + 1e-15 for a, b in zip(vals, vals[1:]))


def test_is_terminated():
    mk = lambda ln_r: Level(1, ln_r, 0.0, ln_r, 0.5, 0.0)
    assert is_terminated(mk(0.0))
    assert not is_terminated(mk(math.log(0.99980)))
    assert is_terminated(mk(-1e-4))


def test_advance_constant_batch():
    s = Schedule(p=0.1)
    s.start(100)
    lv = s.advance(np.full(100, -3.0))
    assert lv.mean_beta == 1.0 and lv.ln_r == 0.0 and s.terminated


def test_advance_two_point_fields():
    s = Schedule(p=0.5 * (1 + math.exp(-1)), r_tol=1e-12)
    s.start(2)
    lv = s.advance(np.array([7.0, 2.0]))
    assert lv.ln_lmax_before == 7.0
    assert lv.ln_threshold == pytest.approx(3.0, abs=1e-6)
    assert lv.ln_rho_hat == pytest.approx(math.log(lv.mean_beta), abs=1e-15)
    assert lv.ln_threshold > s.levels[0].ln_threshold


def test_ladder_invariants_random():
    rng = np.random.default_rng(4)
    s = Schedule(p=0.2, max_levels=30)
    s.start(200)
    lnL = rng.normal(size=200) * 5
    acc = 0.0
    while not s.terminated and len(s.levels) < 30:
        prev = s.last.ln_threshold
        lv = s.advance(lnL)
        acc += math.log(lv.mean_beta)
        assert lv.ln_threshold > prev
        assert 0.0 < lv.mean_beta <= 1.0
        assert lv.ln_rho_hat == pytest.approx(acc, abs=1e-12)
        lnL = lnL[lnL > lv.ln_threshold - 2] + 0.5  # drift the batch upward
        if lnL.size < 5:
            break


def test_budget_exhausted():
    s = Schedule(p=0.1, max_levels=2)
    s.start(3)
    s.advance(np.array([0.0, -10.0, -20.0]))
    if not s.terminated:
        with pytest.raises(BudgetExhausted):
            s.advance(np.array([0.0, -10.0, -20.0]))
