"""
Test the survival laws, the threshold solver, the survival curves and the
interval formulas.
"""

import itertools
import math
import sys
from pathlib import Path
sys.path.insert(0, str(Path(__file__).parent.parent))

import numpy as np
import pytest

from reft.errors import ConfigurationError, ReftError
from reft.failure import ReliabilityParams, sample_ttf
from reft.reliability import (FLEET_GROUP_SIZE, FLEET_LAMBDA_HW, FLEET_LAMBDA_SW, FLEET_NODES, FLEET_SHAPES, Days,
                              Seconds, SurvivalInputs, SurvivalMode, curves_to_csv, generate_survival_curves,
                              grid_search_interval, lambda_re_fail, o_save, o_total, optimal_interval, p_ck_survive,
                              p_re_survive, recommend_intervals, solve_interval_for_threshold, survival_at, t_re_ckpt,
                              t_re_sn, threshold_intervals)


# ---------------------------------------------------------------------------
# survival laws

def test_p_re_survive_examples():
    assert p_re_survive(SurvivalInputs(k=8, n=4)) == 1.0
    assert p_re_survive(SurvivalInputs(k=4, n=2, p_s=0.9)) == pytest.approx(0.9801)
    # a group of one tolerates its only failure, leaving just the unrecoverable faults
    assert p_re_survive(SurvivalInputs(k=5, n=1, p_s=0.3, p_re=0.9)) == pytest.approx(0.9 ** 5)
    with pytest.raises(ConfigurationError):
        p_re_survive(SurvivalInputs(k=7, n=2, p_s=0.9))
    with pytest.raises(ConfigurationError):
        p_re_survive(SurvivalInputs(k=4, n=2, p_s=1.5))


def test_p_ck_survive_examples():
    assert p_ck_survive(SurvivalInputs(k=2, p_s=0.99)) == pytest.approx(0.9801)
    assert p_ck_survive(SurvivalInputs(k=0, p_s=0.5, p_tr=0.5)) == 1.0
    assert p_ck_survive(SurvivalInputs(k=3, p_s=0.9, p_tr=0.8)) == pytest.approx((0.9 * 0.8) ** 3)


def _enumerate_re_survive(k, n, p_s, p_re):
    """Sum the probability of every failure pattern where no group loses two members."""
    total = 0.0
    for failed in itertools.product((0, 1), repeat=k):
        if all(sum(failed[g:g + n]) <= 1 for g in range(0, k, n)):
            dead = sum(failed)
            total += (1 - p_s) ** dead * p_s ** (k - dead)
    return total * p_re ** k


def test_p_re_survive_matches_enumeration():
    rng = np.random.default_rng(17)
    for _ in range(100):
        n = int(rng.integers(1, 5))
        k = n * int(rng.integers(0, 8 // n + 1))
        p_s, p_re = float(rng.uniform(0.5, 1.0)), float(rng.uniform(0.9, 1.0))
        inputs = SurvivalInputs(k=k, n=n, p_s=p_s, p_re=p_re)

        assert p_re_survive(inputs) == pytest.approx(_enumerate_re_survive(k, n, p_s, p_re), rel=1e-9), \
            f"k={k} n={n} p_s={p_s}"


def test_in_memory_protection_never_hurts():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 9))
        k = n * int(rng.integers(1, 50))
        p_s = float(rng.uniform(0.0, 1.0))
        inputs = SurvivalInputs(k=k, n=n, p_s=p_s, p_tr=1.0, p_re=1.0)
        assert p_re_survive(inputs) >= p_ck_survive(inputs) - 1e-15


def test_inputs_from_weibull_rates():
    params = ReliabilityParams(0.01, 0.001, 1.0)
    inputs = SurvivalInputs.at(params, Days(2.0), k=6, n=3)
    assert inputs.p_s == pytest.approx(math.exp(-0.02))
    assert inputs.p_tr == pytest.approx(math.exp(-0.002))
    assert inputs.p_re == 1.0

    literal = SurvivalInputs.at(params, 2.0, k=6, n=3, literal=True)
    assert literal.p_re == pytest.approx(math.exp(-0.002))


def test_units_do_not_mix():
    assert Days(1.0).to_seconds() == 86400.0
    assert Seconds(43200.0).to_days() == 0.5
    with pytest.raises(TypeError):
        o_save(Days(1.0), 2.0)
    with pytest.raises(TypeError):
        optimal_interval(Days(0.1), 1e-4)
    with pytest.raises(TypeError):
        SurvivalInputs.at(ReliabilityParams(0.1, 0.0, 1.0), Seconds(60.0), k=2, n=1)


def test_monte_carlo_checkpoint_survival():
    k, t, trials = 16, 1.5, 20000
    params = ReliabilityParams(0.01, 0.004, 1.3)
    rng = np.random.default_rng(21)
    hw = sample_ttf(params.lambda_hw, params.c, rng, size=(trials, k))
    sw = sample_ttf(params.lambda_sw, params.c, rng, size=(trials, k))
    estimate = float(np.mean(np.all((hw > t) & (sw > t), axis=1)))

    expected = survival_at(params, t, SurvivalMode.CKPT, k=k, n=1)
    sigma = math.sqrt(expected * (1 - expected) / trials)
    assert abs(estimate - expected) < 3 * sigma


def test_monte_carlo_in_memory_survival():
    k, n, t, trials = 12, 3, 2.0, 20000
    params = ReliabilityParams(0.08, 0.0, 1.3)
    rng = np.random.default_rng(22)
    failed = sample_ttf(params.lambda_hw, params.c, rng, size=(trials, k)) <= t
    per_group = failed.reshape(trials, k // n, n).sum(axis=2)
    estimate = float(np.mean(np.all(per_group <= 1, axis=1)))

    expected = survival_at(params, t, SurvivalMode.REFT, k=k, n=n)
    sigma = math.sqrt(expected * (1 - expected) / trials)
    assert abs(estimate - expected) < 3 * sigma


# ---------------------------------------------------------------------------
# threshold solver

def test_solver_matches_closed_form_for_checkpointing():
    params = ReliabilityParams(FLEET_LAMBDA_HW, FLEET_LAMBDA_SW, 1.3)
    days = solve_interval_for_threshold(params, 0.9, SurvivalMode.CKPT)
    expected = (-math.log(0.9) / (FLEET_NODES * (FLEET_LAMBDA_HW + FLEET_LAMBDA_SW))) ** (1 / 1.3)

    assert isinstance(days, Days)
    assert days == pytest.approx(expected, rel=1e-5)
    assert days == pytest.approx(0.408, abs=0.005)


def test_solver_edge_cases():
    params = ReliabilityParams(FLEET_LAMBDA_HW, FLEET_LAMBDA_SW, 1.3)
    assert solve_interval_for_threshold(params, 1.0) == 0.0
    for threshold in (0.0, -0.5, 1.5):
        with pytest.raises(ConfigurationError):
            solve_interval_for_threshold(params, threshold)
    with pytest.raises(ConfigurationError):
        solve_interval_for_threshold(params, 0.9, SurvivalMode.REFT, k=3071, n=6)
    with pytest.raises(ReftError):
        solve_interval_for_threshold(ReliabilityParams(0.0, 0.0, 1.0), 0.9)


def test_threshold_intervals():
    rows = threshold_intervals(0.9)
    assert [row['c'] for row in rows] == list(FLEET_SHAPES)

    by_shape = {row['c']: row for row in rows}
    assert by_shape[1.3]['ckpt_days'] == pytest.approx(0.408, abs=0.005)
    assert by_shape[1.3]['reft_days'] == pytest.approx(16.1, rel=0.02)
    for row in rows:
        assert row['ratio'] >= 10.0, f"c={row['c']} ratio {row['ratio']}"
        assert row['reft_literal_days'] <= row['reft_days']
        params = ReliabilityParams(FLEET_LAMBDA_HW, FLEET_LAMBDA_SW, row['c'])
        assert survival_at(params, row['reft_days'], SurvivalMode.REFT) == pytest.approx(0.9, abs=1e-5)


# ---------------------------------------------------------------------------
# curves

def test_survival_curves():
    grid = np.linspace(0.0, 30.0, 61)
    rows = generate_survival_curves(grid, max_workers=2)
    assert len(rows) == len(FLEET_SHAPES) * len(grid)

    for c in FLEET_SHAPES:
        curve = [row for row in rows if row['c'] == c]
        assert curve[0]['t_days'] == 0.0
        assert curve[0]['p_re_survive'] == 1.0 and curve[0]['p_ck_survive'] == 1.0
        reft = [row['p_re_survive'] for row in curve]
        ckpt = [row['p_ck_survive'] for row in curve]
        assert all(a >= b for a, b in zip(reft, reft[1:])), f"REFT curve for c={c} rises"
        assert all(a >= b for a, b in zip(ckpt, ckpt[1:])), f"CKPT curve for c={c} rises"
        assert all(r >= ck for r, ck in zip(reft, ckpt))


def test_curves_agree_with_scalar_survival():
    params = ReliabilityParams(FLEET_LAMBDA_HW, FLEET_LAMBDA_SW, 1.5)
    rows = generate_survival_curves([0.5, 4.0], shapes=[1.5], literal=True)
    for row in rows:
        assert row['p_re_survive'] == pytest.approx(
            survival_at(params, row['t_days'], SurvivalMode.REFT, literal=True))
        assert row['p_ck_survive'] == pytest.approx(survival_at(params, row['t_days'], SurvivalMode.CKPT))


def test_curves_csv_and_bad_grids():
    text = curves_to_csv(generate_survival_curves([0.0, 1.0], shapes=[1.0]))
    lines = text.splitlines()
    assert lines[0] == "c,t_days,p_re_survive,p_ck_survive"
    assert len(lines) == 3

    with pytest.raises(ConfigurationError):
        generate_survival_curves([])
    with pytest.raises(ConfigurationError):
        generate_survival_curves([-1.0, 1.0])
    with pytest.raises(ConfigurationError):
        generate_survival_curves([1.0], k=FLEET_NODES + 1, n=FLEET_GROUP_SIZE)


# ---------------------------------------------------------------------------
# overhead and intervals

@pytest.mark.parametrize("t_ft,t_comp,expected", [(5.0, 3.0, 2.0), (2.0, 3.0, 0.0), (3.0, 3.0, 0.0)])
def test_o_save(t_ft, t_comp, expected):
    assert o_save(t_ft, t_comp) == expected


def test_lambda_re_fail():
    assert lambda_re_fail(0.1, 2) == pytest.approx(0.01)
    assert lambda_re_fail(0.0, 6) == 0.0
    assert lambda_re_fail(0.3, 1) == 0.0
    with pytest.raises(ConfigurationError):
        lambda_re_fail(1.5, 2)


def test_optimal_interval():
    assert optimal_interval(2.0, 1e-4) == pytest.approx(200.0)
    assert optimal_interval(0.0, 1e-4) == 0.0
    assert optimal_interval(2.0, 0.0) == math.inf
    with pytest.raises(ConfigurationError):
        optimal_interval(-1.0, 1e-4)


def test_overlapped_snapshots_run_every_iteration():
    assert t_re_sn(2.0, 3.0, 0.01) == 0.0
    assert t_re_sn(5.0, 3.0, 0.01) == pytest.approx(20.0)
    assert t_re_ckpt(5.0, 3.0, 0.0, 6) == math.inf


def test_grid_search_finds_the_closed_form():
    rng = np.random.default_rng(8)
    for _ in range(100):
        o = float(rng.uniform(0.1, 100.0))
        lam = float(10 ** rng.uniform(-6, -2))
        found = grid_search_interval(o, lam)
        assert found == pytest.approx(optimal_interval(o, lam), rel=0.01), f"o={o} lambda={lam}"

    with pytest.raises(ConfigurationError):
        grid_search_interval(1.0, 1e-3, lo=10.0, hi=1.0)


def test_o_total():
    assert o_total(2.0, 100.0, 10.0, 5.0, 0.01) == pytest.approx(25.0)
    assert o_total(2.0, 100.0, 0.0, 5.0, 0.01) == math.inf


def test_recommend_intervals():
    report = recommend_intervals(5.0, 60.0, 3.0, 0.01, 6)

    assert set(report) == {'o_re_save', 'o_ck_save', 'lambda_nd_fail', 'lambda_re_fail', 't_re_sn', 't_ckpt',
                           't_re_ckpt'}
    assert report['o_re_save'] == 2.0
    assert report['o_ck_save'] == 57.0
    assert report['t_re_sn'] == pytest.approx(20.0)
    assert report['t_ckpt'] == pytest.approx(math.sqrt(114.0 / 0.01))
    assert report['lambda_re_fail'] < report['lambda_nd_fail']
    assert report['t_re_ckpt'] > report['t_re_sn']
