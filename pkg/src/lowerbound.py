"""
Lower bound δ_lb = inf{δ : the tolerance test accepts} on the maximum
subgroup bias, and the benchmark verdict against a critical value δ_c.
"""

from dataclasses import dataclass, field, replace

import numpy as np
from tqdm import tqdm

from cate_test import initial_model, opt_config_for, prepare, run_test
from config import (
    DEFAULT_ALPHA, DEFAULT_FUNCTION_CLASS, DEFAULT_GRID_STEPS, DEFAULT_REFINE_ITERS, DEFAULT_RESTARTS
)
from crossu import decide
from errors import ConfigurationError, DomainError
from nuisance import ToleranceBounds


@dataclass
class SearchGrid:
    delta_max: float
    coarse_steps: int = DEFAULT_GRID_STEPS
    refine_iters: int = DEFAULT_REFINE_ITERS

    def __post_init__(self):
        if not self.delta_max > 0:
            raise ConfigurationError(f"delta_max must be positive, got {self.delta_max}")
        if self.coarse_steps < 2 or self.refine_iters < 0:
            raise ConfigurationError("Need at least 2 coarse grid points and non-negative refinement rounds")

    def coarse(self):
        return np.linspace(0.0, self.delta_max, self.coarse_steps)

    def to_dict(self):
        return {'delta_max': self.delta_max, 'coarse_steps': self.coarse_steps, 'refine_iters': self.refine_iters}


@dataclass
class LowerBoundResult:
    delta_lb: float
    grid_trace: list
    alpha: float
    search: dict
    saturated: bool = False
    model: object = field(default=None, repr=False)

    def to_dict(self):
        return {
            'delta_lb': self.delta_lb,
            'saturated': self.saturated,
            'alpha': self.alpha,
            'search': self.search,
            'trace': self.grid_trace,
        }


@dataclass
class BenchmarkVerdict:
    delta_lb: float
    delta_c: float
    discard_study: bool

    def to_dict(self):
        return {'delta_lb': self.delta_lb, 'delta_c': self.delta_c, 'discard': self.discard_study}


def bias_lower_bound(trial, cate, alpha=DEFAULT_ALPHA, grid=None, cfg=None, subset=None, kernel=None,
                     function_class=DEFAULT_FUNCTION_CLASS, split_seed=0, early_stop=True,
                     setup=None, verbose=False):
    """
    Estimate δ_lb with constant tolerance bounds τ_obs ± δ.

    The optimized test is run on an ascending coarse δ grid with warm-started
    model parameters. Between the last rejecting and the first accepting grid
    point, bisection refines the bound for `grid.refine_iters` rounds. If the
    test already accepts at δ = 0 the bound is 0; if it still rejects at
    δ_max the result is δ_max with `saturated` set.

    Args:
        trial: TrialData
        cate: CateEstimate fitted on the observational data
        alpha: Significance level
        grid: SearchGrid (defaults to δ_max = 4 × max |τ_obs| over the trial)
        cfg: OptConfig used at every grid point
        subset: FeatureSubset (defaults to all features)
        kernel: KernelSpec
        function_class: Name in FUNCTION_CLASSES
        split_seed: Seed for the trial split
        early_stop: Stop optimizing a grid point once |T| falls below the threshold
        setup: A prepared TestSetup to reuse

    Returns:
        LowerBoundResult
    """
    setup = setup or prepare(trial, subset, kernel, split_seed)
    center = cate.predict(trial.X)
    if grid is None:
        grid = SearchGrid(delta_max=max(4 * float(np.max(np.abs(center))), 1.0))
    cfg = cfg or opt_config_for(function_class, restarts=DEFAULT_RESTARTS)
    if early_stop:
        cfg = replace(cfg, stop_below=decide(0.0, alpha).threshold)

    trace = []
    state = {'model': initial_model(setup, function_class, seed=cfg.seed)}

    def evaluate(delta):
        bounds = ToleranceBounds(center - delta, center + delta, policy='constant', delta=delta, center=center)
        report = run_test(setup, bounds, function_class, cfg, alpha, model0=state['model'])
        state['model'] = report.opt.model
        trace.append({
            'delta': float(delta),
            'min_abs_statistic': report.decision.statistic,
            'reject': report.decision.reject,
        })
        return report

    first_accept = None
    accepted_model = None
    coarse = grid.coarse()
    for k, delta in enumerate(tqdm(coarse, desc='coarse grid', disable=not verbose)):
        report = evaluate(delta)
        if not report.decision.reject:
            first_accept = k
            accepted_model = report.opt.model
            break

    search = grid.to_dict()
    if first_accept is None:
        if verbose:
            print(f"Test still rejects at delta_max = {grid.delta_max}; bound is saturated")
        return LowerBoundResult(float(grid.delta_max), sorted(trace, key=lambda r: r['delta']),
                                alpha, search, saturated=True, model=state['model'])
    if first_accept == 0:
        return LowerBoundResult(0.0, trace, alpha, search, model=accepted_model)

    lo, hi = coarse[first_accept - 1], coarse[first_accept]
    for _ in range(grid.refine_iters):
        mid = 0.5 * (lo + hi)
        report = evaluate(mid)
        if report.decision.reject:
            lo = mid
        else:
            hi = mid
            accepted_model = report.opt.model

    if verbose:
        print(f"delta_lb = {hi:.4f} (bracket [{lo:.4f}, {hi:.4f}])")
    return LowerBoundResult(float(hi), sorted(trace, key=lambda r: r['delta']), alpha, search, model=accepted_model)


def benchmark(delta_lb, delta_c):
    """Discard the observational study when δ_lb ≥ δ_c."""
    if delta_lb < 0 or delta_c < 0:
        raise DomainError(f"delta_lb and delta_c must be non-negative, got {delta_lb}, {delta_c}")
    return BenchmarkVerdict(float(delta_lb), float(delta_c), bool(delta_lb >= delta_c))
