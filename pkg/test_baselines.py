"""
Tests for the ATE tolerance test and the zero-tolerance baselines.
"""

import numpy as np
import pytest
from scipy.stats import norm

from baselines import ate_lower_bound, ate_tolerance_test, zero_tolerance_cate_test
from cate_test import opt_config_for, prepare, run_test
from crossu import decide
from dataset import FeatureSubset, ScenarioConfig, TrialData, generate
from errors import ConfigurationError, DegenerateVarianceError
from nuisance import CateEstimate, fit_cate, make_bounds, oracle_cate


@pytest.fixture(scope='module')
def biased():
    config = ScenarioConfig(scenario=1, n_obs=200, n_rct=1000, max_bias=120.0, seed=8)
    trial, _, _ = generate(config)
    return trial, oracle_cate(config)


def test_ate_components(biased):
    trial, cate = biased
    result = ate_tolerance_test(trial, cate, 0.0, B=200, seed=1)
    assert result.diff == pytest.approx(result.ate_rct - result.ate_obs)
    assert result.ate_obs == pytest.approx(np.mean(cate.predict(trial.X)))
    assert result.statistic == pytest.approx(abs(result.diff) / result.boot_se)
    assert result.threshold == pytest.approx(norm.ppf(0.95))
    assert result.B == 200


def test_ate_detects_average_bias(biased):
    trial, cate = biased
    assert ate_tolerance_test(trial, cate, 0.0, B=200, seed=1).reject


def test_tolerance_covering_the_gap_accepts(biased):
    trial, cate = biased
    gap = abs(ate_tolerance_test(trial, cate, 0.0, B=200, seed=1).diff)
    result = ate_tolerance_test(trial, cate, gap + 1.0, B=200, seed=1)
    assert result.statistic <= 0
    assert not result.reject


def test_ate_statistic_decreases_in_delta(biased):
    trial, cate = biased
    statistics = [ate_tolerance_test(trial, cate, d, B=200, seed=2).statistic for d in (0.0, 10.0, 20.0, 40.0)]
    assert all(a > b for a, b in zip(statistics, statistics[1:]))


def test_bootstrap_is_deterministic(biased):
    trial, cate = biased
    a = ate_tolerance_test(trial, cate, 5.0, B=150, seed=9)
    b = ate_tolerance_test(trial, cate, 5.0, B=150, seed=9)
    assert a.to_dict() == b.to_dict()


def test_ate_lower_bound(biased):
    trial, cate = biased
    result = ate_tolerance_test(trial, cate, 0.0, B=200, seed=1)
    bound = ate_lower_bound(result)
    assert bound == pytest.approx(max(0.0, abs(result.diff) - norm.ppf(0.95) * result.boot_se))
    assert not ate_tolerance_test(trial, cate, bound + 1e-6, B=200, seed=1).reject
    assert ate_lower_bound(result, alpha=0.01) < bound


@pytest.mark.parametrize("delta, B, alpha", [(-1.0, 200, 0.05), (1.0, 50, 0.05), (1.0, 200, 1.5)])
def test_ate_invalid_arguments(biased, delta, B, alpha):
    trial, cate = biased
    with pytest.raises(ConfigurationError):
        ate_tolerance_test(trial, cate, delta, alpha=alpha, B=B)


def test_zero_tolerance_cate_rejects_biased_data(biased):
    trial, cate = biased
    decision = zero_tolerance_cate_test(trial, cate, cfg=opt_config_for('small-mlp', epochs=5))
    assert decision.reject


def test_zero_tolerance_cate_degenerate_signal():
    trial = TrialData(np.arange(16, dtype=float).reshape(8, 2), np.zeros(8), np.array([0, 1] * 4))
    cate = CateEstimate(lambda X: np.zeros(len(X)))
    with pytest.raises(DegenerateVarianceError):
        zero_tolerance_cate_test(trial, cate, subset=FeatureSubset.all(2))


@pytest.mark.slow
def test_cancelling_biases_hide_from_the_ate_test():
    ate_rejections, cate_rejections = 0, 0
    for seed in range(100):
        config = ScenarioConfig(scenario=2, n_obs=20000, n_rct=4000, max_bias=60.0, seed=seed)
        trial, obs, _ = generate(config)
        cate = fit_cate(obs)
        ate_rejections += ate_tolerance_test(trial, cate, 10.0, seed=seed).reject
        # once |T| is below the threshold the test can only accept
        cfg = opt_config_for('small-mlp', epochs=2000, seed=seed, stop_below=decide(0.0, 0.05).threshold)
        report = run_test(prepare(trial, split_seed=seed), make_bounds(cate, trial.X, 10.0), 'small-mlp', cfg)
        cate_rejections += report.decision.reject
    assert ate_rejections / 100 <= 0.10
    assert cate_rejections / 100 >= 0.8
