"""
Baseline tests: the ATE test with tolerance (bootstrap t-test) and the
zero-tolerance variants of the ATE and CATE tests.
"""

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm
from tqdm import tqdm

from cate_test import prepare, run_test
from config import DEFAULT_ALPHA, DEFAULT_BOOTSTRAP, DEFAULT_FUNCTION_CLASS
from errors import ConfigurationError, DegenerateVarianceError
from nuisance import make_bounds
from signal_fn import pseudo_outcome


@dataclass
class AteTestResult:
    ate_rct: float
    ate_obs: float
    diff: float
    boot_se: float
    statistic: float
    threshold: float
    reject: bool
    delta: float
    alpha: float
    B: int

    def to_dict(self):
        return dict(self.__dict__)


def ate_tolerance_test(trial, cate, delta, alpha=DEFAULT_ALPHA, B=DEFAULT_BOOTSTRAP, seed=0, verbose=False):
    """
    Test H0: |E[τ_rct] − E[τ_obs]| ≤ δ over the trial population.

    The trial ATE is the mean IPW pseudo-outcome and the observational ATE
    is the mean of τ_obs over the trial covariates. The standard error comes
    from B paired bootstrap resamples of the trial rows with τ_obs held fixed.
    The test rejects when (|diff| − δ) / se ≥ Φ⁻¹(1 − α).

    Returns:
        AteTestResult
    """
    if delta < 0:
        raise ConfigurationError(f"delta must be non-negative, got {delta}")
    if B < 100:
        raise ConfigurationError(f"Need at least 100 bootstrap samples, got {B}")
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")

    pseudo = pseudo_outcome(trial)
    tau = cate.predict(trial.X)
    contrast = pseudo - tau
    ate_rct, ate_obs = float(pseudo.mean()), float(tau.mean())
    diff = ate_rct - ate_obs

    rng = np.random.default_rng(seed)
    boot = np.empty(B)
    for b in tqdm(range(B), desc='bootstrap', disable=not verbose):
        boot[b] = contrast[rng.integers(0, trial.n, trial.n)].mean()
    boot_se = float(boot.std(ddof=1))
    if boot_se == 0:
        raise DegenerateVarianceError("Bootstrap standard error of the ATE difference is zero")

    statistic = (abs(diff) - delta) / boot_se
    threshold = float(norm.ppf(1 - alpha))
    return AteTestResult(ate_rct, ate_obs, diff, boot_se, float(statistic), threshold,
                         bool(statistic >= threshold), float(delta), alpha, B)


def ate_lower_bound(result, alpha=None):
    """Smallest δ at which the ATE test accepts: max(0, |diff| − z_{1−α} · se)."""
    threshold = result.threshold if alpha is None else float(norm.ppf(1 - alpha))
    return max(0.0, abs(result.diff) - threshold * result.boot_se)


def zero_tolerance_cate_test(trial, cate, alpha=DEFAULT_ALPHA, cfg=None, subset=None, kernel=None,
                             split_seed=0, function_class=DEFAULT_FUNCTION_CLASS):
    """
    The CATE test with τ_± = τ_obs (δ = 0). g has no effect, so a single
    evaluation of the statistic decides.

    Returns:
        Decision
    """
    setup = prepare(trial, subset, kernel, split_seed)
    bounds = make_bounds(cate, trial.X, 0.0)
    return run_test(setup, bounds, function_class, cfg, alpha).decision
