"""
Tests for the observational T-learner, tolerance bounds and critical values.
"""

import numpy as np
import pytest

from config import BASE_TREATMENT_EFFECT
from dataset import ObsData, ScenarioConfig, generate
from errors import BoundsError, ConfigurationError, DataParseError, DomainError, MissingInputError
from nuisance import (
    CateEstimate, RegressorSpec, ToleranceBounds, critical_value, fit_cate, load_bounds_csv,
    make_bounds, oracle_cate
)


@pytest.fixture(scope='module')
def scenario():
    config = ScenarioConfig(scenario=1, n_obs=6000, n_rct=400, max_bias=60.0, seed=3)
    trial, obs, oracle = generate(config)
    return config, trial, obs, oracle


@pytest.mark.parametrize("spec", [RegressorSpec(), RegressorSpec('knn', k=15), RegressorSpec('ridge', lam=0.5)])
def test_fit_cate_predicts_finite_values(scenario, spec):
    _, trial, obs, _ = scenario
    cate = fit_cate(obs, spec)
    tau = cate.predict(trial.X)
    assert tau.shape == (trial.n,)
    assert np.all(np.isfinite(tau))
    lo, hi = cate.diagnostics['clip_range']
    assert np.all((tau >= lo) & (tau <= hi))
    assert cate.diagnostics['arm_sizes']['treated'] + cate.diagnostics['arm_sizes']['control'] == obs.n


def test_knn_recovers_subgroup_bias(scenario):
    _, trial, obs, oracle = scenario
    tau = fit_cate(obs, RegressorSpec('knn', k=10)).predict(trial.X)
    biased = oracle.trial_delta > 0
    assert tau[biased].mean() - tau[~biased].mean() == pytest.approx(60.0, abs=12.0)


def test_oracle_cate_adds_bias_to_base_effect(scenario):
    config, trial, _, oracle = scenario
    tau = oracle_cate(config).predict(trial.X)
    np.testing.assert_allclose(tau, BASE_TREATMENT_EFFECT + oracle.trial_delta)


def test_invalid_regressor_spec():
    with pytest.raises(ConfigurationError):
        RegressorSpec('forest')
    with pytest.raises(ConfigurationError):
        RegressorSpec('knn', k=0)
    with pytest.raises(ConfigurationError):
        RegressorSpec('ridge', lam=-1.0)


def test_constant_bounds():
    cate = CateEstimate(lambda X: X[:, 0])
    X = np.array([[1.0], [2.0], [3.0]])
    bounds = make_bounds(cate, X, 0.5)
    np.testing.assert_allclose(bounds.lower, [0.5, 1.5, 2.5])
    np.testing.assert_allclose(bounds.upper, [1.5, 2.5, 3.5])
    assert bounds.delta == 0.5
    assert bounds.policy == 'constant'


def test_zero_delta_bounds_coincide():
    cate = CateEstimate(lambda X: X[:, 0])
    bounds = make_bounds(cate, np.ones((3, 1)), 0.0)
    np.testing.assert_array_equal(bounds.lower, bounds.upper)


def test_array_bounds_pass_through():
    cate = CateEstimate(lambda X: X[:, 0])
    bounds = make_bounds(cate, np.zeros((2, 1)), (np.array([0.0, 1.0]), np.array([1.0, 3.0])))
    assert bounds.policy == 'array'
    np.testing.assert_array_equal(bounds.upper, [1.0, 3.0])


def test_negative_delta_is_rejected():
    with pytest.raises(BoundsError):
        make_bounds(CateEstimate(lambda X: X[:, 0]), np.zeros((2, 1)), -1.0)


def test_crossed_bounds_name_the_row():
    with pytest.raises(BoundsError, match="row 1"):
        ToleranceBounds(np.array([0.0, 2.0]), np.array([1.0, 1.0]))


def test_load_bounds_csv(tmp_path):
    path = tmp_path / 'bounds.csv'
    path.write_text("tau_lower,tau_upper\n1.0,2.0\n0.5,3.0\n")
    lower, upper = load_bounds_csv(str(path), 2)
    np.testing.assert_array_equal(lower, [1.0, 0.5])
    np.testing.assert_array_equal(upper, [2.0, 3.0])
    with pytest.raises(DataParseError):
        load_bounds_csv(str(path), 3)
    with pytest.raises(MissingInputError):
        load_bounds_csv(str(tmp_path / 'missing.csv'), 2)


def test_load_bounds_csv_bad_value(tmp_path):
    path = tmp_path / 'bounds.csv'
    path.write_text("tau_lower,tau_upper\n1.0,2.0\nx,3.0\n")
    with pytest.raises(DataParseError) as excinfo:
        load_bounds_csv(str(path), 2)
    assert excinfo.value.row == 2


def test_critical_value():
    cate = CateEstimate(lambda X: X[:, 0])
    X = np.array([[-1.0], [-3.0], [10.0]])
    assert critical_value(cate, X, [True, True, False]) == pytest.approx(2.0)
    with pytest.raises(DomainError):
        critical_value(cate, X, [False, False, False])


def smooth_obs(n, seed):
    rng = np.random.default_rng(seed)
    X = rng.uniform(0, 1, size=(n, 1))
    t = rng.binomial(1, 0.5, n)
    y = np.sin(2 * np.pi * X[:, 0]) + t * (1 + X[:, 0] ** 2) + rng.normal(size=n)
    return ObsData(X, y, t)


@pytest.mark.slow
def test_knn_error_shrinks_with_sample_size():
    grid = np.linspace(0.1, 0.9, 400)[:, None]
    truth = 1 + grid[:, 0] ** 2

    def mean_squared_error(n):
        errors = [np.mean((fit_cate(smooth_obs(n, seed)).predict(grid) - truth) ** 2) for seed in range(20)]
        return np.mean(errors)

    # k = ceil(sqrt(n_arm)) keeps the variance term at order n^(-1/2)
    ratio = mean_squared_error(16000) / mean_squared_error(4000)
    assert 0.35 <= ratio <= 0.65
