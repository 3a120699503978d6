"""
Monte Carlo replication engine: type-I calibration, power curves,
lower-bound distributions and ablation sweeps over generated scenarios.
"""

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import pandas as pd
from tqdm import tqdm

from baselines import ate_lower_bound, ate_tolerance_test
from cate_test import opt_config_for, prepare, run_test
from config import (
    DEFAULT_ALPHA, DEFAULT_BOOTSTRAP, DEFAULT_FUNCTION_CLASS, DEFAULT_GRID_STEPS,
    DEFAULT_REFINE_ITERS, DEFAULT_RESTARTS, DEFAULT_THREADS, MAX_FAILED_FRACTION
)
from dataset import ScenarioConfig, generate, relevance_subset, subset_from_names
from errors import BenchmarkError, ConfigurationError
from kernels import KernelSpec
from lowerbound import SearchGrid, bias_lower_bound
from nuisance import RegressorSpec, fit_cate, make_bounds, oracle_cate

AXES = ('biased_fraction', 'n_rct', 'delta', 'feature_subset_size', 'function_class')
TESTS = ('cate', 'ate', 'cate0', 'ate0')

# Wall-clock fields; kept in the CSV and records, left out of hashed reports
TIMING_FIELDS = ('runtime', 'runtime_mean')


@dataclass
class ExperimentPlan:
    template: ScenarioConfig
    axis: str
    values: list
    replications: int = 5
    base_seed: int = 0
    tests: tuple = ('cate',)
    alpha: float = DEFAULT_ALPHA
    delta: float = 0.0
    lower_bound: bool = False
    function_class: str = DEFAULT_FUNCTION_CLASS
    features: object = 'all'
    epochs: int = None
    restarts: int = 1
    oracle_nuisance: bool = False
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    delta_max: float = None
    grid_steps: int = DEFAULT_GRID_STEPS
    refine_iters: int = DEFAULT_REFINE_ITERS
    lb_restarts: int = DEFAULT_RESTARTS
    bootstrap: int = DEFAULT_BOOTSTRAP

    def validate(self):
        if self.axis not in AXES:
            raise ConfigurationError(f"Unknown sweep axis '{self.axis}'. Choose from: {', '.join(AXES)}")
        if not self.values:
            raise ConfigurationError("A plan needs at least one axis value")
        if self.replications < 1:
            raise ConfigurationError(f"replications must be at least 1, got {self.replications}")
        if self.restarts < 1 or self.lb_restarts < 1:
            raise ConfigurationError("restarts must be at least 1")
        unknown = set(self.tests) - set(TESTS)
        if unknown or not self.tests:
            raise ConfigurationError(f"Unknown tests {sorted(unknown)}; choose from {', '.join(TESTS)}")
        self.template.validate()
        return self

    def to_dict(self):
        values = asdict(self)
        values['template'] = self.template.to_dict()
        values['tests'] = list(self.tests)
        return values


@dataclass
class ExperimentSummary:
    plan: dict
    rows: list
    records: list
    n_failed: int
    failed: bool

    def to_frame(self):
        return pd.DataFrame(self.rows)

    def report_rows(self):
        """Summary rows without wall-clock timings."""
        return [{k: v for k, v in row.items() if k not in TIMING_FIELDS} for row in self.rows]

    def to_dict(self):
        return {
            'schema': 1,
            'plan': self.plan,
            'summary': self.rows,
            'records': self.records,
            'n_failed': self.n_failed,
            'failed': self.failed,
        }


def derive_seed(base_seed, axis_index, replication):
    """Stable 64-bit seed for one (axis value, replication) cell."""
    state = np.random.SeedSequence([int(base_seed), int(axis_index), int(replication)])
    return int(state.generate_state(1, dtype=np.uint64)[0])


def _scenario_for(plan, value, seed):
    config = plan.template.replace(seed=seed)
    if plan.axis == 'biased_fraction':
        config = config.replace(biased_fraction=float(value))
    elif plan.axis == 'n_rct':
        config = config.replace(n_rct=int(value))
    return config


def run_replication(plan, axis_index, value, replication):
    """Generate one dataset, run the requested tests and return a flat record."""
    seed = derive_seed(plan.base_seed, axis_index, replication)
    record = {
        'axis_index': axis_index,
        'value': value,
        'replication': replication,
        'seed': seed,
        'failed': False,
        'error': None,
        'results': {},
    }
    start = time.perf_counter()
    try:
        config = _scenario_for(plan, value, seed)
        trial, obs, oracle = generate(config)
        record['delta_star_sup'] = oracle.delta_star_sup
        cate = oracle_cate(config) if plan.oracle_nuisance else fit_cate(obs, plan.regressor)

        delta = float(value) if plan.axis == 'delta' else plan.delta
        function_class = value if plan.axis == 'function_class' else plan.function_class
        if plan.axis == 'feature_subset_size':
            subset = relevance_subset(int(value), trial.feature_names)
        else:
            subset = subset_from_names(plan.features, trial.feature_names)

        cfg = opt_config_for(function_class, epochs=plan.epochs, restarts=plan.restarts, seed=seed)
        needs_cate = 'cate' in plan.tests or 'cate0' in plan.tests
        setup = prepare(trial, subset, plan.kernel, split_seed=seed) if needs_cate else None

        for test in plan.tests:
            if test in ('cate', 'cate0'):
                test_delta = delta if test == 'cate' else 0.0
                report = run_test(setup, make_bounds(cate, trial.X, test_delta), function_class, cfg, plan.alpha)
                outcome = {'reject': report.decision.reject, 'statistic': report.decision.statistic}
                if test == 'cate' and plan.lower_bound:
                    grid = SearchGrid(plan.delta_max, plan.grid_steps, plan.refine_iters) if plan.delta_max else None
                    lb_cfg = replace(cfg, restarts=plan.lb_restarts)
                    bound = bias_lower_bound(trial, cate, plan.alpha, grid, lb_cfg, setup=setup,
                                             function_class=function_class)
                    outcome['delta_lb'] = bound.delta_lb
                    outcome['saturated'] = bound.saturated
            else:
                test_delta = delta if test == 'ate' else 0.0
                result = ate_tolerance_test(trial, cate, test_delta, plan.alpha, plan.bootstrap, seed)
                outcome = {'reject': result.reject, 'statistic': result.statistic}
                if test == 'ate' and plan.lower_bound:
                    outcome['delta_lb'] = ate_lower_bound(result)
            record['results'][test] = outcome
    except BenchmarkError as e:
        record['failed'] = True
        record['error'] = f"{type(e).__name__}: {e}"
    record['runtime'] = time.perf_counter() - start
    return record


def _mean_se(values):
    values = np.asarray(values, dtype=float)
    if len(values) == 0:
        return math.nan, math.nan
    sd = values.std(ddof=1) if len(values) > 1 else 0.0
    return float(values.mean()), float(sd / math.sqrt(len(values)))


def summarize(plan, records):
    rows = []
    for axis_index, value in enumerate(plan.values):
        cell = [r for r in records if r['axis_index'] == axis_index]
        ok = [r for r in cell if not r['failed']]
        runtime, _ = _mean_se([r['runtime'] for r in cell])
        for test in plan.tests:
            outcomes = [r['results'][test] for r in ok if test in r['results']]
            reject = [float(o['reject']) for o in outcomes]
            bounds = [o['delta_lb'] for o in outcomes if 'delta_lb' in o]
            lb_mean, lb_se = _mean_se(bounds)
            stat_mean, stat_se = _mean_se([o['statistic'] for o in outcomes])
            rows.append({
                'axis': plan.axis,
                'value': value,
                'test': test,
                'replications': len(cell),
                'failures': len(cell) - len(ok),
                'rejection_rate': float(np.mean(reject)) if reject else math.nan,
                'statistic_mean': stat_mean,
                'statistic_se': stat_se,
                'delta_lb_mean': lb_mean,
                'delta_lb_se': lb_se,
                'runtime_mean': runtime,
            })
    return rows


def run_plan(plan, threads=DEFAULT_THREADS, verbose=False):
    """
    Run every (axis value, replication) cell of a plan and aggregate.

    Per-replication seeds come from derive_seed(base, axis index, replication),
    so rerunning a plan reproduces the summary exactly regardless of the
    number of workers. Failed replications are recorded and excluded from
    the aggregates; the plan is marked failed above MAX_FAILED_FRACTION.

    Args:
        plan: ExperimentPlan
        threads: Number of worker processes (1 runs in-process)
        verbose: Show a progress bar

    Returns:
        ExperimentSummary
    """
    plan.validate()
    jobs = [(i, v, r) for i, v in enumerate(plan.values) for r in range(plan.replications)]
    if verbose:
        print(f"Running {len(jobs)} replications over axis '{plan.axis}' with {threads} worker(s)")

    records = []
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(run_replication, plan, i, v, r) for i, v, r in jobs]
            for future in tqdm(as_completed(futures), total=len(futures), disable=not verbose):
                records.append(future.result())
    else:
        for i, v, r in tqdm(jobs, disable=not verbose):
            records.append(run_replication(plan, i, v, r))

    records.sort(key=lambda r: (r['axis_index'], r['replication']))
    n_failed = sum(r['failed'] for r in records)
    failed = n_failed > MAX_FAILED_FRACTION * len(records)
    if verbose and n_failed:
        print(f"{n_failed} of {len(records)} replications failed")
    return ExperimentSummary(plan.to_dict(), summarize(plan, records), records, n_failed, failed)


def write_summary(summary, output_dir, prefix='plan'):
    """Write the summary CSV (one row per axis value and test) and the full JSON records."""
    output_dir = Path(output_dir)
    output_dir.mkdir(exist_ok=True, parents=True)
    csv_path = output_dir / f'{prefix}_summary.csv'
    json_path = output_dir / f'{prefix}_records.json'
    summary.to_frame().to_csv(csv_path, index=False)
    with open(json_path, 'w') as f:
        json.dump(summary.to_dict(), f, indent=2, sort_keys=True, default=str)
    return str(csv_path), str(json_path)


@dataclass
class GrowthResult:
    table: list
    slope: float
    intercept: float
    degenerate: bool

    def to_dict(self):
        return dict(self.__dict__)


def sqrtn_growth_check(template, n_values, replications, delta=0.0, base_seed=0,
                       function_class=DEFAULT_FUNCTION_CLASS, epochs=None, oracle_nuisance=False,
                       threads=DEFAULT_THREADS, verbose=False):
    """
    Fit log mean|T| against log n_rct by least squares.

    Under a fixed alternative the slope should be close to 1/2; under the
    null |T| stays bounded and the slope is close to 0.

    Returns:
        GrowthResult
    """
    n_values = sorted(int(n) for n in n_values)
    if len(n_values) < 3 or n_values[-1] < 4 * n_values[0]:
        raise ConfigurationError("Need at least 3 trial sizes spanning a factor of 4 or more")

    plan = ExperimentPlan(template=template, axis='n_rct', values=n_values, replications=replications,
                          base_seed=base_seed, tests=('cate',), delta=delta, function_class=function_class,
                          epochs=epochs, oracle_nuisance=oracle_nuisance)
    summary = run_plan(plan, threads=threads, verbose=verbose)
    table = [{'n_rct': row['value'], 'mean_abs_statistic': row['statistic_mean'], 'se': row['statistic_se']}
             for row in summary.rows]

    means = np.array([row['mean_abs_statistic'] for row in table])
    if not np.all(np.isfinite(means)) or np.any(means <= 0):
        return GrowthResult(table, math.nan, math.nan, True)
    slope, intercept = np.polyfit(np.log(n_values), np.log(means), 1)
    return GrowthResult(table, float(slope), float(intercept), False)
