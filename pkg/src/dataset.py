"""
Data model, CSV ingestion, deterministic splitting and the synthetic
scenario generator for trial/observational benchmarking.
"""

import os
import json
import math
from collections import namedtuple
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
from scipy.stats import norm

from config import (
    DEFAULT_PI, DEFAULT_N_OBS, DEFAULT_N_RCT, DEFAULT_MAX_BIAS,
    DEFAULT_BIASED_FRACTION, DEFAULT_POLY_COEFF_STD, BASE_TREATMENT_EFFECT,
    SCENARIO2_MULTIPLIERS
)
from errors import ConfigurationError, DataParseError, MissingInputError, ShapeError, BoundsError

Sample = namedtuple('Sample', ['x', 'y', 't'])

CHANNELS = ('multichannel', 'phone', 'web')
BASE_FEATURES = [
    'history', 'newbie', 'mens', 'womens', 'urban',
    'channel_multichannel', 'channel_phone', 'channel_web',
]
# Feature groups ordered by how much they explain the scenario 2 bias
RELEVANCE_ORDER = ['newbie', 'mens', 'channel', 'history', 'womens', 'urban']

# history is log-normal(0, 0.5), standardized with its population moments
_HISTORY_SIGMA = 0.5
_HISTORY_MEAN = math.exp(_HISTORY_SIGMA ** 2 / 2)
_HISTORY_STD = math.sqrt((math.exp(_HISTORY_SIGMA ** 2) - 1) * math.exp(_HISTORY_SIGMA ** 2))
_HISTORY_CAP = 3.0
_OUTCOME_NOISE = 5.0


def _check_arrays(X, y, t, kind):
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t)
    if X.ndim != 2 or y.ndim != 1 or t.ndim != 1 or not (len(X) == len(y) == len(t)):
        raise ShapeError(f"{kind}: X must be 2-D and y, t 1-D with matching lengths")
    if not np.all(np.isin(t, (0, 1))):
        raise ConfigurationError(f"{kind}: treatment indicator must be 0 or 1")
    if not np.all(np.isfinite(X)) or not np.all(np.isfinite(y)):
        raise ConfigurationError(f"{kind}: covariates and outcomes must be finite")
    t = t.astype(int)
    if t.sum() == 0 or t.sum() == len(t):
        raise ConfigurationError(f"{kind}: both treatment arms must be non-empty")
    return X, y, t


@dataclass
class TrialData:
    """Randomized trial rows with the known randomization probability pi."""
    X: np.ndarray
    y: np.ndarray
    t: np.ndarray
    pi: float = DEFAULT_PI
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        if not 0 < self.pi < 1:
            raise ConfigurationError(f"Trial propensity pi must lie in (0, 1), got {self.pi}")
        self.X, self.y, self.t = _check_arrays(self.X, self.y, self.t, 'trial')
        if len(self.y) < 4:
            raise ShapeError(f"Trial needs at least 4 samples, got {len(self.y)}")

    @property
    def n(self):
        return len(self.y)

    @property
    def d(self):
        return self.X.shape[1]

    def samples(self):
        return [Sample(x, y, t) for x, y, t in zip(self.X, self.y, self.t)]


@dataclass
class ObsData:
    """Observational study rows."""
    X: np.ndarray
    y: np.ndarray
    t: np.ndarray
    feature_names: list = field(default_factory=list)

    def __post_init__(self):
        self.X, self.y, self.t = _check_arrays(self.X, self.y, self.t, 'observational')

    @property
    def n(self):
        return len(self.y)

    def samples(self):
        return [Sample(x, y, t) for x, y, t in zip(self.X, self.y, self.t)]


@dataclass(frozen=True)
class FeatureSubset:
    """Sorted feature indices J; the empty subset means ATE granularity."""
    indices: tuple = ()

    def __post_init__(self):
        idx = tuple(int(i) for i in self.indices)
        if any(i < 0 for i in idx) or any(b <= a for a, b in zip(idx, idx[1:])):
            raise BoundsError(f"Feature indices must be non-negative and strictly increasing: {idx}")
        object.__setattr__(self, 'indices', idx)

    @classmethod
    def all(cls, d):
        return cls(tuple(range(d)))

    @classmethod
    def none(cls):
        return cls(())

    def check(self, d):
        if self.indices and self.indices[-1] >= d:
            raise BoundsError(f"Feature index {self.indices[-1]} out of range for {d} features")
        return self

    def restrict(self, X):
        X = np.asarray(X, dtype=float)
        self.check(X.shape[1])
        return X[:, list(self.indices)]

    def __len__(self):
        return len(self.indices)


@dataclass
class ScenarioConfig:
    scenario: int = 1
    n_obs: int = DEFAULT_N_OBS
    n_rct: int = DEFAULT_N_RCT
    max_bias: float = DEFAULT_MAX_BIAS
    biased_fraction: float = DEFAULT_BIASED_FRACTION
    subgroup_bias_table: dict = None
    poly_coeff_std: float = DEFAULT_POLY_COEFF_STD
    poly_seed: int = 0
    n_noise_features: int = 0
    pi: float = DEFAULT_PI
    seed: int = 0

    def validate(self):
        if self.scenario not in (1, 2, 3):
            raise ConfigurationError(f"Unknown scenario {self.scenario}; expected 1, 2 or 3")
        if self.n_obs < 4 or self.n_rct < 4:
            raise ConfigurationError("n_obs and n_rct must both be at least 4")
        if not math.isfinite(self.max_bias):
            raise ConfigurationError("max_bias must be finite")
        if not 0 < self.pi < 1:
            raise ConfigurationError(f"pi must lie in (0, 1), got {self.pi}")
        if self.seed < 0 or self.poly_seed < 0 or self.n_noise_features < 0:
            raise ConfigurationError("seeds and n_noise_features must be non-negative")
        if self.scenario == 1 and not 0 < self.biased_fraction <= 1:
            raise ConfigurationError(
                f"biased_fraction must lie in (0, 1] so the biased subgroup is non-empty, "
                f"got {self.biased_fraction}"
            )
        if self.scenario == 2:
            table = self.bias_table()
            if len(table) != 12:
                raise ConfigurationError("Scenario 2 needs a bias for each of the 12 (newbie, mens, channel) cells")
            # Cells are equally likely, so the population mean is the plain mean
            if abs(np.mean(list(table.values()))) > 0.02 * abs(self.max_bias):
                raise ConfigurationError("Scenario 2 subgroup biases must cancel on average")
        if self.scenario == 3 and self.poly_coeff_std < 0:
            raise ConfigurationError("poly_coeff_std must be non-negative")
        return self

    def bias_table(self):
        if self.subgroup_bias_table is not None:
            return {tuple(k): float(v) for k, v in self.subgroup_bias_table.items()}
        return {k: m * self.max_bias for k, m in SCENARIO2_MULTIPLIERS.items()}

    def poly_coefficients(self):
        """(a, b, c) rows for newbie = 0 and newbie = 1."""
        rng = np.random.default_rng(self.poly_seed)
        return rng.normal(0.0, self.poly_coeff_std, size=(2, 3))

    def replace(self, **changes):
        values = dict(self.__dict__)
        values.update(changes)
        return ScenarioConfig(**values)

    def to_dict(self):
        values = dict(self.__dict__)
        if values['subgroup_bias_table'] is not None:
            values['subgroup_bias_table'] = {
                ','.join(str(p) for p in k): v for k, v in self.bias_table().items()
            }
        return values


@dataclass
class OracleBias:
    """Ground-truth bias Δ*(x) := τ_obs(x) − μ(x) for generated data."""
    delta_star: np.ndarray
    trial_delta: np.ndarray
    delta_star_sup: float

    def to_dict(self):
        return {
            'delta_star': self.delta_star.tolist(),
            'trial_delta': self.trial_delta.tolist(),
            'delta_star_sup': self.delta_star_sup,
        }


def feature_names_for(n_noise_features=0):
    return BASE_FEATURES + [f'noise_{i}' for i in range(n_noise_features)]


def _history_quantile(fraction):
    """Standardized history value below which `fraction` of the population falls."""
    if fraction >= 1:
        return math.inf
    raw = math.exp(_HISTORY_SIGMA * norm.ppf(fraction))
    return min((raw - _HISTORY_MEAN) / _HISTORY_STD, _HISTORY_CAP)


def _draw_covariates(rng, n, n_noise_features):
    raw = np.exp(_HISTORY_SIGMA * rng.standard_normal(n))
    history = np.minimum((raw - _HISTORY_MEAN) / _HISTORY_STD, _HISTORY_CAP)
    binaries = rng.integers(0, 2, size=(n, 4)).astype(float)  # newbie, mens, womens, urban
    channel = rng.integers(0, len(CHANNELS), size=n)
    one_hot = np.eye(len(CHANNELS))[channel]
    noise = rng.standard_normal((n, n_noise_features))
    return np.column_stack([history, binaries, one_hot, noise])


def _baseline_outcome(rng, X):
    noise = np.clip(rng.normal(0.0, _OUTCOME_NOISE, len(X)), -4 * _OUTCOME_NOISE, 4 * _OUTCOME_NOISE)
    return 5.0 + 4.0 * X[:, 0] + 3.0 * X[:, 2] - 2.0 * X[:, 1] + noise


def bias_function(config):
    """
    Build the ground-truth bias Δ*(x) for a scenario.

    Args:
        config: ScenarioConfig

    Returns:
        Callable mapping an (n, d) covariate array to the per-row bias
    """
    config.validate()
    history, newbie, mens = 0, 1, 2
    channel_cols = [5, 6, 7]

    if config.scenario == 1:
        cutoff = _history_quantile(config.biased_fraction)

        def delta(X):
            X = np.asarray(X, dtype=float)
            return np.where(X[:, history] <= cutoff, float(config.max_bias), 0.0)

    elif config.scenario == 2:
        table = config.bias_table()
        lookup = np.zeros((2, 2, len(CHANNELS)))
        for (nb, mn, ch), value in table.items():
            lookup[int(nb), int(mn), CHANNELS.index(ch)] = value

        def delta(X):
            X = np.asarray(X, dtype=float)
            ch = np.argmax(X[:, channel_cols], axis=1)
            return lookup[X[:, newbie].astype(int), X[:, mens].astype(int), ch]

    else:
        coeffs = config.poly_coefficients()

        def delta(X):
            X = np.asarray(X, dtype=float)
            a, b, c = coeffs[X[:, newbie].astype(int)].T
            h = X[:, history]
            return a * h ** 2 + b * h + c

    return delta


def cell_labels(X):
    """(newbie, mens, channel) cell of every generated row, the scenario 2 grouping."""
    X = np.asarray(X, dtype=float)
    channel = np.argmax(X[:, 5:8], axis=1)
    return [(int(nb), int(mn), CHANNELS[ch]) for nb, mn, ch in zip(X[:, 1], X[:, 2], channel)]


def generate(config):
    """
    Generate a trial and an observational study with a known bias structure.

    The trial has CATE μ(x) = 30 and T ~ Bernoulli(pi). The observational
    study shares the covariate law; its treated outcomes are shifted by
    Δ*(x), so its regression difference equals μ(x) + Δ*(x).

    Args:
        config: ScenarioConfig

    Returns:
        (TrialData, ObsData, OracleBias)
    """
    config.validate()
    delta = bias_function(config)
    names = feature_names_for(config.n_noise_features)
    rng = np.random.default_rng(config.seed)

    X_rct = _draw_covariates(rng, config.n_rct, config.n_noise_features)
    t_rct = (rng.random(config.n_rct) < config.pi).astype(int)
    y_rct = _baseline_outcome(rng, X_rct) + BASE_TREATMENT_EFFECT * t_rct

    X_obs = _draw_covariates(rng, config.n_obs, config.n_noise_features)
    t_obs = (rng.random(config.n_obs) < config.pi).astype(int)
    delta_obs = delta(X_obs)
    y_obs = _baseline_outcome(rng, X_obs) + t_obs * (BASE_TREATMENT_EFFECT + delta_obs)

    trial_delta = delta(X_rct)
    oracle = OracleBias(
        delta_star=delta_obs,
        trial_delta=trial_delta,
        delta_star_sup=float(np.max(np.abs(trial_delta))) if len(trial_delta) else 0.0,
    )
    trial = TrialData(X_rct, y_rct, t_rct, pi=config.pi, feature_names=list(names))
    obs = ObsData(X_obs, y_obs, t_obs, feature_names=list(names))
    return trial, obs, oracle


def save_generated(trial, obs, oracle, config, output_dir, prefix='scenario'):
    """
    Write the trial CSV, observational CSV and a sidecar JSON with the
    scenario configuration and the oracle bias.

    Returns:
        (trial_path, obs_path, sidecar_path)
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(exist_ok=True, parents=True)
    trial_path = output_dir / f'{prefix}_rct.csv'
    obs_path = output_dir / f'{prefix}_obs.csv'
    sidecar_path = output_dir / f'{prefix}_oracle.json'

    for data, source, path in ((trial, 'rct', trial_path), (obs, 'obs', obs_path)):
        frame = pd.DataFrame(data.X, columns=data.feature_names)
        frame['y'] = data.y
        frame['t'] = data.t
        frame['source'] = source
        frame.to_csv(path, index=False, float_format='%.17g')

    with open(sidecar_path, 'w') as f:
        json.dump({'config': config.to_dict(), 'oracle': oracle.to_dict()}, f, indent=2, sort_keys=True)

    return str(trial_path), str(obs_path), str(sidecar_path)


@dataclass
class Encoding:
    """How raw CSV columns map to encoded feature columns."""
    continuous: dict = field(default_factory=dict)   # column -> (mean, std)
    categorical: dict = field(default_factory=dict)  # column -> sorted labels
    binary: list = field(default_factory=list)
    groups: dict = field(default_factory=dict)       # column -> encoded names


@dataclass
class Schema:
    outcome: str = 'y'
    treatment: str = 't'
    source: str = 'source'
    categorical: list = None
    standardize: bool = True
    encoding: Encoding = None


@dataclass
class Dataset:
    X: np.ndarray
    y: np.ndarray
    t: np.ndarray
    source: np.ndarray
    feature_names: list
    encoding: Encoding

    @property
    def n(self):
        return len(self.y)

    def arm_sizes(self):
        return int(np.sum(self.t == 0)), int(np.sum(self.t == 1))

    def select(self, source):
        if self.source is None:
            return self
        mask = self.source == source
        return Dataset(self.X[mask], self.y[mask], self.t[mask], self.source[mask],
                       self.feature_names, self.encoding)

    def trial(self, pi=DEFAULT_PI):
        data = self.select('rct')
        return TrialData(data.X, data.y, data.t, pi=pi, feature_names=list(self.feature_names))

    def obs(self):
        data = self.select('obs')
        return ObsData(data.X, data.y, data.t, feature_names=list(self.feature_names))

    def samples(self):
        return [Sample(x, y, t) for x, y, t in zip(self.X, self.y, self.t)]


def _parse_number(value, row, column):
    try:
        number = float(value)
    except ValueError:
        raise DataParseError(f"non-numeric value '{value}' in column '{column}'", row=row, column=column)
    if not math.isfinite(number):
        raise DataParseError(f"non-finite value '{value}' in column '{column}'", row=row, column=column)
    return number


def _is_numeric(values):
    try:
        return all(math.isfinite(float(v)) for v in values)
    except ValueError:
        return False


def load_csv(path, schema=None):
    """
    Load a benchmarking CSV file.

    Categorical columns are one-hot encoded in sorted-label order; continuous
    columns are standardized with the statistics in `schema.encoding` when
    given, otherwise with statistics computed from this file. 0/1 columns are
    kept as they are.

    Args:
        path: Path to a comma-separated UTF-8 file with a header row
        schema: Schema naming the outcome, treatment and source columns

    Returns:
        Dataset
    """
    schema = schema or Schema()
    if not os.path.exists(path):
        raise MissingInputError(path)

    frame = pd.read_csv(path, dtype=str, keep_default_na=False, encoding='utf-8')
    for column in (schema.outcome, schema.treatment):
        if column not in frame.columns:
            raise DataParseError(f"missing required column '{column}' in {path}", column=column)

    n = len(frame)
    y = np.empty(n)
    t = np.empty(n, dtype=int)
    for i, (y_raw, t_raw) in enumerate(zip(frame[schema.outcome], frame[schema.treatment])):
        row = i + 1
        y[i] = _parse_number(y_raw, row, schema.outcome)
        t_value = _parse_number(t_raw, row, schema.treatment)
        if t_value not in (0.0, 1.0):
            raise DataParseError(f"treatment must be 0 or 1, got '{t_raw}'", row=row, column=schema.treatment)
        t[i] = int(t_value)

    source = None
    if schema.source in frame.columns:
        source = frame[schema.source].str.strip().to_numpy()
        for i, value in enumerate(source):
            if value not in ('rct', 'obs'):
                raise DataParseError(f"source must be 'rct' or 'obs', got '{value}'", row=i + 1, column=schema.source)

    previous = schema.encoding
    encoding = Encoding()
    blocks = []
    names = []
    reserved = {schema.outcome, schema.treatment, schema.source}
    for column in [c for c in frame.columns if c not in reserved]:
        values = frame[column].str.strip()
        categorical = (
            (schema.categorical is not None and column in schema.categorical)
            or (previous is not None and column in previous.categorical)
            or (schema.categorical is None and not _is_numeric(values))
        )
        if categorical:
            labels = previous.categorical[column] if previous and column in previous.categorical \
                else sorted(set(values))
            position = {label: k for k, label in enumerate(labels)}
            block = np.zeros((n, len(labels)))
            for i, value in enumerate(values):
                if value not in position:
                    raise DataParseError(f"unknown label '{value}' in column '{column}'", row=i + 1, column=column)
                block[i, position[value]] = 1.0
            encoded = [f'{column}_{label}' for label in labels]
            encoding.categorical[column] = list(labels)
        else:
            block = np.array([_parse_number(v, i + 1, column) for i, v in enumerate(values)])
            is_binary = np.all(np.isin(block, (0.0, 1.0)))
            if previous is not None and column in previous.binary and not is_binary:
                row = int(np.flatnonzero(~np.isin(block, (0.0, 1.0)))[0]) + 1
                raise DataParseError(f"column '{column}' must be 0/1 as in the reference encoding",
                                     row=row, column=column)
            if previous is not None and column in previous.continuous:
                mean, std = previous.continuous[column]
                block = (block - mean) / std
                encoding.continuous[column] = (mean, std)
            elif schema.standardize and not is_binary:
                mean, std = float(block.mean()), float(block.std())
                std = std if std > 0 else 1.0
                block = (block - mean) / std
                encoding.continuous[column] = (mean, std)
            else:
                encoding.binary.append(column)
            block = block[:, None]
            encoded = [column]
        encoding.groups[column] = encoded
        blocks.append(block)
        names.extend(encoded)

    X = np.hstack(blocks) if blocks else np.zeros((n, 0))
    return Dataset(X, y, t, source, names, encoding)


def subset_from_names(names, feature_names, encoding=None):
    """
    Map user-facing column names to a FeatureSubset.

    Accepts 'all', 'none', or a list of names. A name may be an encoded
    column ('channel_web') or a categorical group ('channel').
    """
    if isinstance(names, str):
        if names == 'all':
            return FeatureSubset.all(len(feature_names))
        if names == 'none':
            return FeatureSubset.none()
        names = [n.strip() for n in names.split(',') if n.strip()]

    selected = set()
    for name in names:
        if name in feature_names:
            selected.add(feature_names.index(name))
        elif encoding is not None and name in encoding.groups:
            selected.update(feature_names.index(c) for c in encoding.groups[name])
        else:
            matches = [i for i, c in enumerate(feature_names) if c.startswith(f'{name}_')]
            if not matches:
                raise ConfigurationError(f"Unknown feature '{name}'")
            selected.update(matches)
    return FeatureSubset(tuple(sorted(selected)))


def relevance_subset(k, feature_names):
    """The first k feature groups of RELEVANCE_ORDER followed by noise features."""
    groups = RELEVANCE_ORDER + [n for n in feature_names if n.startswith('noise_')]
    if not 0 <= k <= len(groups):
        raise ConfigurationError(f"Feature subset size must lie in [0, {len(groups)}], got {k}")
    return subset_from_names(groups[:k], feature_names) if k else FeatureSubset.none()


def split_halves(trial, seed):
    """
    Split trial row indices into two disjoint halves of equal size.

    With an odd number of rows the last shuffled index is dropped.

    Returns:
        (I1, I2) as sorted integer arrays
    """
    n = trial.n if hasattr(trial, 'n') else int(trial)
    if n < 4:
        raise ShapeError(f"Need at least 4 trial rows to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    m = n // 2
    return np.sort(order[:m]), np.sort(order[m:2 * m])
