"""
The tolerance CATE test: prepares the split, gram matrix and restricted
covariates for one trial/feature-subset pair, then optimizes g and decides.
"""

from dataclasses import dataclass

import numpy as np

from biasmodel import OptConfig, build_model, optimize
from config import DEFAULT_ALPHA, DEFAULT_EPOCHS, DEFAULT_FUNCTION_CLASS, get_function_class
from crossu import decide
from dataset import FeatureSubset, split_halves
from kernels import KernelSpec, cross_gram
from signal_fn import build_parts


@dataclass
class TestSetup:
    __test__ = False

    trial: object
    subset: FeatureSubset
    kernel: KernelSpec
    split: tuple
    gram: object
    XJ: np.ndarray

    @property
    def feature_names(self):
        names = self.trial.feature_names
        return [names[i] for i in self.subset.indices] if names else list(self.subset.indices)


@dataclass
class TestReport:
    __test__ = False

    decision: object
    hhat2: float
    sigma_hat: float
    studentized: float
    delta: float
    features: list
    function_class: str
    opt: object

    def to_dict(self, include_trace=False, include_model=False):
        report = {
            'statistic': self.decision.statistic,
            'threshold': self.decision.threshold,
            'p_value': self.decision.p_value,
            'reject': self.decision.reject,
            'alpha': self.decision.alpha,
            'delta': self.delta,
            'hhat2': self.hhat2,
            'sigma_hat': self.sigma_hat,
            'studentized': self.studentized,
            'features': self.features,
            'function_class': self.function_class,
            'epoch_of_min': self.opt.epoch_of_min,
        }
        if include_trace:
            report['opt_trace'] = self.opt.trace
        if include_model:
            report['g_model'] = self.opt.model.to_dict()
        return report


def prepare(trial, subset=None, kernel=None, split_seed=0):
    """
    Split the trial into halves and compute the cross gram on the feature subset.

    Args:
        trial: TrialData
        subset: FeatureSubset (defaults to all features)
        kernel: KernelSpec (defaults to laplacian, scale 1)
        split_seed: Seed for split_halves

    Returns:
        TestSetup
    """
    subset = (subset or FeatureSubset.all(trial.d)).check(trial.d)
    kernel = kernel or KernelSpec()
    I1, I2 = split_halves(trial, split_seed)
    gram = cross_gram(trial.X[I1], trial.X[I2], subset, kernel)
    return TestSetup(trial, subset, kernel, (I1, I2), gram, subset.restrict(trial.X))


def opt_config_for(function_class=DEFAULT_FUNCTION_CLASS, **overrides):
    settings = get_function_class(function_class) if isinstance(function_class, str) else function_class
    values = {'epochs': DEFAULT_EPOCHS, 'learning_rate': settings['learning_rate']}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return OptConfig(**values)


def initial_model(setup, function_class=DEFAULT_FUNCTION_CLASS, seed=0):
    settings = get_function_class(function_class) if isinstance(function_class, str) else function_class
    return build_model(settings, len(setup.subset), seed=seed)


def run_test(setup, bounds, function_class=DEFAULT_FUNCTION_CLASS, cfg=None,
             alpha=DEFAULT_ALPHA, model0=None, verbose=False):
    """
    Run the tolerance test for one set of tolerance bounds.

    Args:
        setup: TestSetup from prepare()
        bounds: ToleranceBounds at the trial rows
        function_class: Name in FUNCTION_CLASSES
        cfg: OptConfig (defaults from the function class)
        alpha: Significance level
        model0: Starting model, e.g. a warm start from a previous run

    Returns:
        TestReport
    """
    cfg = cfg or opt_config_for(function_class)
    model0 = model0 or initial_model(setup, function_class, seed=cfg.seed)
    parts = build_parts(setup.trial, bounds)
    opt = optimize(model0, parts, setup.split, setup.gram, setup.XJ, cfg, verbose=verbose)
    decision = decide(opt.min_abs_statistic, alpha)
    if verbose:
        print(f"min |T| = {decision.statistic:.4f}, threshold = {decision.threshold:.4f}, "
              f"{'reject' if decision.reject else 'accept'}")
    cross = opt.cross
    return TestReport(
        decision=decision,
        hhat2=cross.hhat2,
        sigma_hat=cross.sigma_hat,
        studentized=cross.studentized,
        delta=bounds.delta,
        features=setup.feature_names,
        function_class=function_class if isinstance(function_class, str) else function_class['architecture'],
        opt=opt,
    )
