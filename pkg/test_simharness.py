"""
Tests for Monte Carlo experiment plans and the √n growth check.
"""

import json

import numpy as np
import pandas as pd
import pytest

import simharness
from config import DEFAULT_RESTARTS
from dataset import ScenarioConfig
from errors import ConfigurationError
from lowerbound import LowerBoundResult
from simharness import ExperimentPlan, derive_seed, run_plan, sqrtn_growth_check, write_summary


def template(**changes):
    values = dict(scenario=1, n_obs=400, n_rct=200, max_bias=60.0)
    values.update(changes)
    return ScenarioConfig(**values)


def quick_plan(**changes):
    values = dict(template=template(), axis='delta', values=[0.0, 200.0], replications=2, base_seed=3,
                  tests=('cate', 'ate'), epochs=10, oracle_nuisance=True, bootstrap=100)
    values.update(changes)
    return ExperimentPlan(**values)


def without_runtime(rows):
    return [{k: v for k, v in row.items() if k not in ('runtime', 'runtime_mean')} for row in rows]


def test_derive_seed_is_stable_and_distinct():
    assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
    seeds = {derive_seed(0, i, r) for i in range(5) for r in range(20)}
    assert len(seeds) == 100
    assert derive_seed(0, 0, 1) != derive_seed(1, 0, 1)


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        quick_plan(replications=0).validate()
    with pytest.raises(ConfigurationError):
        quick_plan(values=[]).validate()
    with pytest.raises(ConfigurationError):
        quick_plan(axis='zip_code').validate()
    with pytest.raises(ConfigurationError):
        quick_plan(tests=('cate', 'elastic')).validate()


def test_run_plan_summary_shape():
    summary = run_plan(quick_plan())
    assert len(summary.records) == 4
    assert len(summary.rows) == 4
    assert [(r['axis_index'], r['replication']) for r in summary.records] == [(0, 0), (0, 1), (1, 0), (1, 1)]
    for row in summary.rows:
        assert 0.0 <= row['rejection_rate'] <= 1.0
        assert row['replications'] == 2
    assert not summary.failed


def test_wide_tolerance_accepts():
    summary = run_plan(quick_plan(tests=('ate',)))
    wide = [row for row in summary.rows if row['value'] == 200.0][0]
    assert wide['rejection_rate'] == 0.0


def test_run_plan_is_reproducible():
    a = run_plan(quick_plan(tests=('cate', 'cate0', 'ate0')))
    b = run_plan(quick_plan(tests=('cate', 'cate0', 'ate0')))
    assert a.report_rows() == b.report_rows()
    assert without_runtime(a.records) == without_runtime(b.records)


def test_worker_pool_matches_serial_run():
    plan = quick_plan(axis='n_rct', values=[100, 200], delta=0.0)
    serial = run_plan(plan, threads=1)
    pooled = run_plan(plan, threads=2)
    assert without_runtime(serial.records) == without_runtime(pooled.records)


def test_axis_values_reach_the_replications():
    summary = run_plan(quick_plan(axis='n_rct', values=[100, 300], tests=('cate0',)))
    assert [r['value'] for r in summary.records] == [100, 100, 300, 300]
    summary = run_plan(quick_plan(axis='feature_subset_size', values=[0, 3], tests=('cate',)))
    assert not summary.failed


def test_failed_replications_are_counted():
    summary = run_plan(quick_plan(axis='function_class', values=['constant', 'bogus'], tests=('cate',)))
    assert summary.n_failed == 2
    assert summary.failed
    bogus = [r for r in summary.records if r['value'] == 'bogus']
    assert all(r['failed'] and 'ConfigurationError' in r['error'] for r in bogus)
    row = [r for r in summary.rows if r['value'] == 'bogus'][0]
    assert row['failures'] == 2
    assert np.isnan(row['rejection_rate'])


def test_lower_bounds_are_aggregated():
    plan = quick_plan(values=[0.0], tests=('cate', 'ate'), lower_bound=True, delta_max=200.0,
                      grid_steps=3, refine_iters=1)
    summary = run_plan(plan)
    for row in summary.rows:
        assert row['delta_lb_mean'] >= 0
        assert row['delta_lb_se'] >= 0


def test_write_summary(tmp_path):
    summary = run_plan(quick_plan())
    csv_path, json_path = write_summary(summary, tmp_path, prefix='sweep')
    frame = pd.read_csv(csv_path)
    assert len(frame) == 4
    assert set(frame['test']) == {'cate', 'ate'}
    with open(json_path) as f:
        payload = json.load(f)
    assert payload['schema'] == 1
    assert len(payload['records']) == 4
    assert payload['plan']['axis'] == 'delta'


@pytest.mark.parametrize("n_values", [[500], [500, 1000, 1500], [500, 4000]])
def test_growth_check_needs_a_wide_axis(n_values):
    with pytest.raises(ConfigurationError):
        sqrtn_growth_check(template(), n_values, replications=2)


def test_growth_check_returns_a_slope():
    result = sqrtn_growth_check(template(max_bias=120.0), [100, 200, 400], replications=2, epochs=5,
                                oracle_nuisance=True)
    assert [row['n_rct'] for row in result.table] == [100, 200, 400]
    assert not result.degenerate
    assert np.isfinite(result.slope)



def test_lower_bound_search_uses_its_own_restarts(monkeypatch):
    seen = []

    def record_restarts(trial, cate, alpha, grid, cfg, **kwargs):
        seen.append(cfg.restarts)
        return LowerBoundResult(0.0, [], alpha, {})

    monkeypatch.setattr(simharness, 'bias_lower_bound', record_restarts)
    plan = quick_plan(tests=('cate',), lower_bound=True, restarts=1)
    assert plan.lb_restarts == DEFAULT_RESTARTS
    run_plan(plan)
    assert seen and set(seen) == {DEFAULT_RESTARTS}

    seen.clear()
    run_plan(quick_plan(tests=('cate',), lower_bound=True, lb_restarts=2))
    assert set(seen) == {2}
    with pytest.raises(ConfigurationError):
        quick_plan(lb_restarts=0).validate()

@pytest.mark.slow
def test_statistic_grows_like_root_n_under_the_alternative():
    result = sqrtn_growth_check(template(n_obs=20000), [500, 2000, 8000], replications=10, oracle_nuisance=True)
    assert 0.35 <= result.slope <= 0.65


@pytest.mark.slow
def test_null_plan_is_calibrated():
    plan = ExperimentPlan(template=template(n_obs=400, n_rct=2000, max_bias=0.0), axis='delta', values=[0.0],
                          replications=200, tests=('cate',), oracle_nuisance=True)
    summary = run_plan(plan)
    assert 0.01 <= summary.rows[0]['rejection_rate'] <= 0.10


def rejection_rates(summary):
    return {(row['value'], row['test']): row['rejection_rate'] for row in summary.rows}


@pytest.mark.slow
def test_null_plan_with_estimated_nuisance_keeps_its_level():
    plan = ExperimentPlan(template=template(n_obs=20000, n_rct=2000, max_bias=0.0), axis='delta', values=[0.0],
                          replications=200, tests=('cate',), function_class='small-mlp')
    summary = run_plan(plan)
    assert summary.n_failed == 0
    assert summary.rows[0]['rejection_rate'] <= 0.10


@pytest.mark.slow
def test_linear_g_loses_validity_on_cancelling_cells():
    plan = ExperimentPlan(template=template(scenario=2, n_obs=400, n_rct=4000), axis='function_class',
                          values=['linear', 'small-mlp'], replications=20, tests=('cate',), delta=70.0,
                          oracle_nuisance=True)
    rates = rejection_rates(run_plan(plan))
    assert rates[('linear', 'cate')] > 0.3
    assert rates[('small-mlp', 'cate')] <= 0.10


@pytest.mark.slow
def test_cate_bound_beats_ate_bound_on_small_subgroups():
    plan = ExperimentPlan(template=template(n_obs=20000, n_rct=2000), axis='biased_fraction', values=[0.1, 0.2],
                          replications=100, tests=('cate', 'ate'), lower_bound=True, epochs=2000)
    bounds = {(row['value'], row['test']): row['delta_lb_mean'] for row in run_plan(plan).rows}
    for fraction in (0.1, 0.2):
        assert bounds[(fraction, 'cate')] > bounds[(fraction, 'ate')]


@pytest.mark.slow
def test_ate_and_empty_subset_cate_agree_under_the_null():
    plan = ExperimentPlan(template=template(n_obs=400, n_rct=2000, max_bias=0.0), axis='delta', values=[0.0],
                          replications=200, tests=('cate0', 'ate0'), features='none', oracle_nuisance=True)
    rates = rejection_rates(run_plan(plan))
    assert abs(rates[(0.0, 'cate0')] - rates[(0.0, 'ate0')]) <= 0.07
