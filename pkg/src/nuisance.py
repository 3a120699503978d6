"""
Nuisance estimation on the observational study: the regression difference
τ_obs(x) = E[Y | T=1, X=x] − E[Y | T=0, X=x] and the tolerance bounds
τ_±(x) evaluated at the trial covariates.
"""

import os
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from sklearn.base import clone
from sklearn.linear_model import Ridge
from sklearn.neighbors import KNeighborsRegressor

from config import BASE_TREATMENT_EFFECT
from dataset import bias_function
from errors import BoundsError, ConfigurationError, DataParseError, DomainError, FitError, MissingInputError


@dataclass(frozen=True)
class RegressorSpec:
    family: str = 'knn'
    k: int = None         # None means ceil(sqrt(n_arm))
    lam: float = 1.0

    def __post_init__(self):
        if self.family not in ('knn', 'ridge'):
            raise ConfigurationError(f"Unknown regressor family '{self.family}'")
        if self.k is not None and self.k < 1:
            raise ConfigurationError(f"knn needs k >= 1, got {self.k}")
        if self.lam < 0:
            raise ConfigurationError(f"ridge penalty must be non-negative, got {self.lam}")

    def build(self, n_arm):
        if self.family == 'ridge':
            return Ridge(alpha=self.lam)
        k = self.k if self.k is not None else math.ceil(math.sqrt(n_arm))
        return KNeighborsRegressor(n_neighbors=min(k, n_arm))


@dataclass
class CateEstimate:
    """A fitted τ_obs predictor plus fit diagnostics."""
    predictor: object
    diagnostics: dict = field(default_factory=dict)

    def predict(self, X):
        return np.asarray(self.predictor(np.asarray(X, dtype=float)), dtype=float)

    __call__ = predict


@dataclass
class ToleranceBounds:
    lower: np.ndarray
    upper: np.ndarray
    policy: str = 'constant'
    delta: float = None
    center: np.ndarray = None

    def __post_init__(self):
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        if self.lower.shape != self.upper.shape or self.lower.ndim != 1:
            raise BoundsError("Lower and upper tolerance bounds must be 1-D arrays of equal length")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise BoundsError("Tolerance bounds must be finite")
        crossed = np.flatnonzero(self.lower > self.upper)
        if len(crossed):
            raise BoundsError(f"Tolerance bounds cross at trial row {crossed[0]}")


def fit_cate(obs, spec=None):
    """
    Fit a T-learner for τ_obs on the observational data.

    Separate outcome regressions m1, m0 are fitted on the treated and control
    rows; predictions m1(x) − m0(x) are clipped to
    [min Y − range, max Y + range] of the observational outcomes.

    Args:
        obs: ObsData
        spec: RegressorSpec (defaults to knn with k = ceil(sqrt(n_arm)))

    Returns:
        CateEstimate
    """
    spec = spec or RegressorSpec()
    treated = obs.t == 1
    n1, n0 = int(treated.sum()), int((~treated).sum())
    if n1 == 0 or n0 == 0:
        raise FitError(f"Both treatment arms must be non-empty (treated={n1}, control={n0})")

    model_1 = clone(spec.build(n1)).fit(obs.X[treated], obs.y[treated])
    model_0 = clone(spec.build(n0)).fit(obs.X[~treated], obs.y[~treated])

    y_min, y_max = float(obs.y.min()), float(obs.y.max())
    spread = y_max - y_min
    lo, hi = y_min - spread, y_max + spread

    def predictor(X):
        return np.clip(model_1.predict(X) - model_0.predict(X), lo, hi)

    residual_1 = obs.y[treated] - model_1.predict(obs.X[treated])
    residual_0 = obs.y[~treated] - model_0.predict(obs.X[~treated])
    diagnostics = {
        'family': spec.family,
        'arm_sizes': {'treated': n1, 'control': n0},
        'residual_rmse': {
            'treated': float(np.sqrt(np.mean(residual_1 ** 2))),
            'control': float(np.sqrt(np.mean(residual_0 ** 2))),
        },
        'clip_range': [lo, hi],
    }
    return CateEstimate(predictor, diagnostics)


def oracle_cate(config):
    """The true observational regression difference μ(x) + Δ*(x) of a generated scenario."""
    delta = bias_function(config)
    return CateEstimate(lambda X: BASE_TREATMENT_EFFECT + delta(X), {'family': 'oracle'})


def make_bounds(cate, trial_X, policy):
    """
    Build tolerance bounds at the trial rows.

    Args:
        cate: CateEstimate
        trial_X: Trial covariates
        policy: A constant δ >= 0 giving τ_± = τ_obs ± δ, or a (lower, upper)
            pair of per-row arrays passed through unchanged

    Returns:
        ToleranceBounds
    """
    if isinstance(policy, (tuple, list)) and len(policy) == 2:
        lower, upper = policy
        if len(lower) != len(trial_X) or len(upper) != len(trial_X):
            raise BoundsError("Per-row bounds must align with the trial rows")
        return ToleranceBounds(lower, upper, policy='array')

    delta = float(policy)
    if not delta >= 0:
        raise BoundsError(f"Tolerance delta must be non-negative, got {delta}")
    center = cate.predict(trial_X)
    return ToleranceBounds(center - delta, center + delta, policy='constant', delta=delta, center=center)


def load_bounds_csv(path, n_trial):
    """Read precomputed tau_lower / tau_upper columns aligned with the trial rows."""
    if not os.path.exists(path):
        raise MissingInputError(path)
    frame = pd.read_csv(path)
    for column in ('tau_lower', 'tau_upper'):
        if column not in frame.columns:
            raise DataParseError(f"missing required column '{column}' in {path}", column=column)
    if len(frame) != n_trial:
        raise DataParseError(f"{path} has {len(frame)} rows but the trial has {n_trial}")
    for column in ('tau_lower', 'tau_upper'):
        values = pd.to_numeric(frame[column], errors='coerce').to_numpy()
        bad = np.flatnonzero(~np.isfinite(values))
        if len(bad):
            raise DataParseError(f"non-numeric value in '{column}'", row=int(bad[0]) + 1, column=column)
    return frame['tau_lower'].to_numpy(dtype=float), frame['tau_upper'].to_numpy(dtype=float)


def critical_value(cate, X, mask):
    """δ_c = |mean of τ_obs over the rows selected by `mask`|."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise DomainError("Critical-value group is empty")
    return float(abs(np.mean(cate.predict(np.asarray(X)[mask]))))
