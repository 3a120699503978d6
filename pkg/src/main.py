import os
import sys
import json
import hashlib
import argparse
import contextlib
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from baselines import ate_lower_bound, ate_tolerance_test
from biasmodel import group_biases, save_model, witness_extremes
from cate_test import opt_config_for, prepare, run_test
from config import (
    DEFAULT_ALPHA, DEFAULT_BIASED_FRACTION, DEFAULT_BOOTSTRAP, DEFAULT_FUNCTION_CLASS,
    DEFAULT_GRID_STEPS, DEFAULT_KERNEL, DEFAULT_KERNEL_SCALE, DEFAULT_MAX_BIAS, DEFAULT_N_OBS,
    DEFAULT_N_RCT, DEFAULT_PI, DEFAULT_POLY_COEFF_STD, DEFAULT_REFINE_ITERS, DEFAULT_RESTARTS,
    DEFAULT_THREADS, FUNCTION_CLASSES, OUTPUT_DIR
)
from dataset import ScenarioConfig, Schema, generate, load_csv, save_generated, subset_from_names
from errors import (
    BenchmarkError, ConfigurationError, DataParseError, MissingInputError, PlanFailedError,
    EXIT_ACCEPT, EXIT_IO, EXIT_REJECT, EXIT_USAGE
)
from kernels import KernelSpec
from lowerbound import SearchGrid, benchmark, bias_lower_bound
from nuisance import RegressorSpec, critical_value, fit_cate, load_bounds_csv, make_bounds
from run_cache import cache_run_result, clear_cache, get_cached_run
from simharness import ExperimentPlan, run_plan, sqrtn_growth_check, write_summary

REPORT_SCHEMA = 1

# CLI spellings of the sweep axes
AXIS_NAMES = {
    'biased-fraction': 'biased_fraction',
    'rct-size': 'n_rct',
    'n-rct': 'n_rct',
    'delta': 'delta',
    'feature-subset-size': 'feature_subset_size',
    'function-class': 'function_class',
}

# Arguments that never change a result and stay out of the cache key
_UNCACHED_ARGS = {'func', 'command', 'no_cache', 'clear_cache', 'clear_cache_days', 'output', 'verbose', 'threads'}


class BenchmarkArgumentParser(argparse.ArgumentParser):
    """Argument parser that exits with the usage code instead of 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def finalize_report(report):
    """
    Stamp a report with its schema version, payload hash and creation time.

    The hash covers the sorted JSON of everything except the timestamp, so
    reruns with identical inputs and seeds produce identical hashes.
    """
    payload = dict(report, schema=REPORT_SCHEMA)
    payload.pop('created_at', None)
    payload.pop('payload_sha256', None)
    text = json.dumps(payload, sort_keys=True, default=_json_default)
    payload['payload_sha256'] = hashlib.sha256(text.encode()).hexdigest()
    payload['created_at'] = datetime.now(timezone.utc).isoformat()
    return json.loads(json.dumps(payload, default=_json_default))


def emit(report, output=None, stream=None):
    """Print the report JSON to stdout and optionally write it to a file."""
    text = json.dumps(report, indent=2, sort_keys=True, default=_json_default)
    print(text, file=stream or sys.stdout)
    if output:
        output = Path(output)
        output.parent.mkdir(exist_ok=True, parents=True)
        output.write_text(text + '\n')


def _cache_params(args):
    return {k: v for k, v in sorted(vars(args).items()) if k not in _UNCACHED_ARGS}


def _handle_cache_flags(args):
    if getattr(args, 'clear_cache', False):
        clear_cache()
        print("Cache cleared.")
    elif getattr(args, 'clear_cache_days', None):
        clear_cache(args.clear_cache_days)


def _scenario_from_args(args):
    return ScenarioConfig(
        scenario=args.scenario,
        n_obs=args.n_obs,
        n_rct=args.n_rct,
        max_bias=args.max_bias,
        biased_fraction=args.biased_fraction,
        poly_coeff_std=args.poly_coeff_std,
        poly_seed=args.poly_seed,
        n_noise_features=args.noise_features,
        pi=args.pi,
        seed=args.seed,
    ).validate()


def _require_inputs(paths):
    for path in paths:
        if path and not os.path.exists(path):
            raise MissingInputError(path)
    return [p for p in paths if p]


def _load_inputs(args):
    """Load the observational file first, then the trial file with the same encoding."""
    categorical = [c.strip() for c in args.categorical.split(',')] if args.categorical else None
    obs_data = load_csv(args.obs, Schema(categorical=categorical))
    trial_data = load_csv(args.trial, Schema(categorical=categorical, encoding=obs_data.encoding))
    if trial_data.feature_names != obs_data.feature_names:
        raise DataParseError(
            f"Trial columns {trial_data.feature_names} differ from observational columns {obs_data.feature_names}"
        )
    trial = trial_data.trial(pi=args.pi)
    obs = obs_data.obs()
    print(f"Loaded {trial.n} trial rows and {obs.n} observational rows with {trial.d} features")
    return trial, obs, obs_data.encoding


def _regressor_from_args(args):
    return RegressorSpec(family=args.regressor, k=args.k, lam=args.ridge_lambda)


def _kernel_from_args(args):
    return KernelSpec(args.kernel, args.kernel_scale)


def _column_labels(X, feature_names, column):
    """Per-row label of a binary column or of a one-hot group such as 'channel'."""
    if column in feature_names:
        values = X[:, feature_names.index(column)]
        if not np.all(np.isin(values, (0.0, 1.0))):
            raise ConfigurationError(f"Column '{column}' is continuous; only binary or categorical columns define groups")
        return [str(int(v)) for v in values]
    prefix = f'{column}_'
    members = [i for i, name in enumerate(feature_names) if name.startswith(prefix)]
    if not members:
        raise ConfigurationError(f"Unknown group column '{column}'")
    suffixes = [feature_names[i][len(prefix):] for i in members]
    return [suffixes[k] for k in np.argmax(X[:, members], axis=1)]


def group_mask(X, feature_names, spec):
    """Row mask for a 'column=value' group specification."""
    if '=' not in spec:
        raise ConfigurationError(f"Group must look like column=value, got '{spec}'")
    column, value = (part.strip() for part in spec.split('=', 1))
    labels = _column_labels(X, feature_names, column)
    mask = np.array([label == value for label in labels])
    if not mask.any():
        raise ConfigurationError(f"No trial rows in group {spec}")
    return mask


def cmd_generate(args):
    config = _scenario_from_args(args)
    print(f"Generating scenario {config.scenario} with seed {config.seed}...")
    trial, obs, oracle = generate(config)
    trial_path, obs_path, oracle_path = save_generated(trial, obs, oracle, config, args.output, args.prefix)
    return {
        'command': 'generate',
        'trial': trial_path,
        'obs': obs_path,
        'oracle': oracle_path,
        'delta_star_sup': oracle.delta_star_sup,
    }, EXIT_ACCEPT


def cmd_test(args):
    cacheable = not args.no_cache and not args.save_model
    inputs = _require_inputs([args.obs, args.trial, args.bounds_csv])
    if cacheable:
        cached = get_cached_run('test', inputs, _cache_params(args))
        if cached:
            print("Using cached test result")
            return cached, EXIT_REJECT if cached['reject'] else EXIT_ACCEPT

    trial, obs, encoding = _load_inputs(args)
    cate = fit_cate(obs, _regressor_from_args(args))
    if args.bounds_csv:
        bounds = make_bounds(cate, trial.X, load_bounds_csv(args.bounds_csv, trial.n))
    else:
        bounds = make_bounds(cate, trial.X, args.delta)

    subset = subset_from_names(args.features, trial.feature_names, encoding)
    setup = prepare(trial, subset, _kernel_from_args(args), split_seed=args.seed)
    cfg = opt_config_for(args.function_class, epochs=args.epochs, learning_rate=args.lr,
                         restarts=args.restarts, seed=args.seed, record_trace=args.trace)
    report = run_test(setup, bounds, args.function_class, cfg, args.alpha, verbose=args.verbose)

    result = report.to_dict(include_trace=args.trace, include_model=args.save_model is not None)
    result.update({'command': 'test', 'bounds_policy': bounds.policy, 'nuisance': cate.diagnostics})
    if args.save_model:
        save_model(report.opt.model, args.save_model)
        print(f"Saved witness model to {args.save_model}")
    if cacheable:
        cache_run_result('test', inputs, _cache_params(args), result)
    return result, EXIT_REJECT if result['reject'] else EXIT_ACCEPT


def cmd_lower_bound(args):
    cacheable = not args.no_cache and not args.save_model and not args.trace_csv
    inputs = _require_inputs([args.obs, args.trial])
    cached = get_cached_run('lower-bound', inputs, _cache_params(args)) if cacheable else None
    if cached:
        print("Using cached lower-bound result")
        return cached, EXIT_REJECT if cached.get('discard') else EXIT_ACCEPT

    trial, obs, encoding = _load_inputs(args)
    cate = fit_cate(obs, _regressor_from_args(args))
    subset = subset_from_names(args.features, trial.feature_names, encoding)
    setup = prepare(trial, subset, _kernel_from_args(args), split_seed=args.seed)
    cfg = opt_config_for(args.function_class, epochs=args.epochs, learning_rate=args.lr,
                         restarts=args.restarts, seed=args.seed)
    grid = SearchGrid(args.delta_max, args.grid_steps, args.refine) if args.delta_max else None
    result = bias_lower_bound(trial, cate, args.alpha, grid, cfg, function_class=args.function_class,
                              setup=setup, verbose=args.verbose)

    report = result.to_dict()
    report['command'] = 'lower-bound'
    if args.ate:
        ate = ate_tolerance_test(trial, cate, 0.0, args.alpha, args.bootstrap, args.seed, verbose=args.verbose)
        report['ate_delta_lb'] = ate_lower_bound(ate)

    delta_c = args.delta_c
    if args.critical_group:
        mask = group_mask(trial.X, trial.feature_names, args.critical_group)
        delta_c = critical_value(cate, trial.X, mask)
        report['critical_group'] = args.critical_group
    exit_code = EXIT_ACCEPT
    if delta_c is not None:
        verdict = benchmark(result.delta_lb, delta_c)
        report.update(verdict.to_dict())
        exit_code = EXIT_REJECT if verdict.discard_study else EXIT_ACCEPT

    if args.witness_groups:
        labels = [_column_labels(trial.X, trial.feature_names, c.strip()) for c in args.witness_groups.split(',')]
        labels = ['|'.join(parts) for parts in zip(*labels)]
        report['group_biases'] = group_biases(result.model, result.delta_lb, setup.XJ, labels)
    if args.witness_extremes:
        extremes = witness_extremes(result.model, result.delta_lb, setup.XJ, args.witness_extremes)
        report['witness_extremes'] = {
            name: {k: v for k, v in tail.items() if k != 'mask'} for name, tail in extremes.items()
        }
    if args.save_model:
        save_model(result.model, args.save_model)
    if args.trace_csv:
        pd.DataFrame(result.grid_trace).to_csv(args.trace_csv, index=False)
        print(f"Wrote grid trace to {args.trace_csv}")

    if cacheable:
        cache_run_result('lower-bound', inputs, _cache_params(args), report)
    return report, exit_code


def _parse_axis_values(axis, raw):
    values = [v.strip() for v in raw.split(',') if v.strip()]
    if axis == 'function_class':
        return values
    try:
        if axis in ('n_rct', 'feature_subset_size'):
            return [int(v) for v in values]
        return [float(v) for v in values]
    except ValueError:
        raise ConfigurationError(f"Axis '{axis}' needs numeric values, got '{raw}'")


def cmd_plan(args):
    axis = AXIS_NAMES.get(args.axis, args.axis)
    plan = ExperimentPlan(
        template=_scenario_from_args(args),
        axis=axis,
        values=_parse_axis_values(axis, args.values),
        replications=args.reps,
        base_seed=args.seed,
        tests=tuple(t.strip() for t in args.tests.split(',') if t.strip()),
        alpha=args.alpha,
        delta=args.delta,
        lower_bound=args.lower_bound,
        function_class=args.function_class,
        features=args.features,
        epochs=args.epochs,
        restarts=args.restarts,
        oracle_nuisance=args.oracle_nuisance,
        regressor=_regressor_from_args(args),
        kernel=_kernel_from_args(args),
        delta_max=args.delta_max,
        lb_restarts=args.lb_restarts,
        bootstrap=args.bootstrap,
    )
    summary = run_plan(plan, threads=args.threads, verbose=args.verbose)
    csv_path, json_path = write_summary(summary, args.output, args.prefix)
    print(f"Wrote {csv_path} and {json_path}")
    if summary.failed:
        raise PlanFailedError(f"{summary.n_failed} of {len(summary.records)} replications failed")
    return {'command': 'plan', 'summary_csv': csv_path, 'records_json': json_path,
            'summary': summary.report_rows(), 'n_failed': summary.n_failed}, EXIT_ACCEPT


def cmd_growth(args):
    n_values = [int(v) for v in args.n_values.split(',') if v.strip()]
    result = sqrtn_growth_check(_scenario_from_args(args), n_values, args.reps, delta=args.delta,
                                base_seed=args.seed, function_class=args.function_class, epochs=args.epochs,
                                oracle_nuisance=args.oracle_nuisance, threads=args.threads,
                                verbose=args.verbose)
    return dict(result.to_dict(), command='growth'), EXIT_ACCEPT


def _add_scenario_args(parser):
    parser.add_argument("--scenario", type=int, default=1, help="Bias scenario: 1, 2 or 3")
    parser.add_argument("--n-obs", type=int, default=DEFAULT_N_OBS, help="Observational sample size")
    parser.add_argument("--n-rct", type=int, default=DEFAULT_N_RCT, help="Trial sample size")
    parser.add_argument("--max-bias", type=float, default=DEFAULT_MAX_BIAS, help="Maximum bias")
    parser.add_argument("--biased-fraction", type=float, default=DEFAULT_BIASED_FRACTION,
                        help="Share of rows in the biased subgroup (scenario 1)")
    parser.add_argument("--poly-coeff-std", type=float, default=DEFAULT_POLY_COEFF_STD,
                        help="Standard deviation of the polynomial coefficients (scenario 3)")
    parser.add_argument("--poly-seed", type=int, default=0, help="Seed fixing the scenario 3 coefficients")
    parser.add_argument("--noise-features", type=int, default=0, help="Number of appended N(0,1) features")
    parser.add_argument("--pi", type=float, default=DEFAULT_PI, help="Treatment probability")


def _add_test_args(parser, restarts=1):
    parser.add_argument("--alpha", type=float, default=DEFAULT_ALPHA, help="Significance level")
    parser.add_argument("--features", default='all',
                        help="Feature subset J: 'all', 'none' or comma-separated column names")
    parser.add_argument("--kernel", choices=['laplacian', 'gaussian'], default=DEFAULT_KERNEL)
    parser.add_argument("--kernel-scale", type=float, default=DEFAULT_KERNEL_SCALE)
    parser.add_argument("--function-class", choices=list(FUNCTION_CLASSES), default=DEFAULT_FUNCTION_CLASS,
                        help="Function class for the interpolation function g")
    parser.add_argument("--epochs", type=int, help="Optimization epochs (default: 6000)")
    parser.add_argument("--lr", type=float, help="Learning rate (default: per function class)")
    parser.add_argument("--restarts", type=int, default=restarts, help="Random restarts of the optimizer")
    parser.add_argument("--regressor", choices=['knn', 'ridge'], default='knn',
                        help="Outcome regressor for the observational T-learner")
    parser.add_argument("--k", type=int, help="Neighbours for knn (default: ceil(sqrt(n_arm)))")
    parser.add_argument("--ridge-lambda", type=float, default=1.0, help="Ridge penalty")
    parser.add_argument("--seed", type=int, default=0, help="Seed for the split and the optimizer")


def _add_input_args(parser):
    parser.add_argument("--trial", required=True, help="Trial CSV file")
    parser.add_argument("--obs", required=True, help="Observational CSV file")
    parser.add_argument("--pi", type=float, default=DEFAULT_PI, help="Known trial treatment probability")
    parser.add_argument("--categorical", help="Comma-separated columns to one-hot encode")
    parser.add_argument("--output", "-o", help="Also write the JSON report to this file")
    parser.add_argument("--save-model", help="Write the optimized g model to this JSON file")
    parser.add_argument("--no-cache", action="store_true", help="Disable caching (force recomputation)")
    parser.add_argument("--clear-cache", action="store_true", help="Clear the cache before running")
    parser.add_argument("--clear-cache-days", type=int, help="Clear cache entries older than this many days")


def build_parser():
    parser = BenchmarkArgumentParser(description="Benchmark observational CATE estimates against a randomized trial")
    parser.add_argument("--verbose", "-v", action="store_true", help="Print progress to stderr")
    sub = parser.add_subparsers(dest='command', required=True, parser_class=BenchmarkArgumentParser)

    gen = sub.add_parser("generate", help="Generate a synthetic trial and observational study")
    _add_scenario_args(gen)
    gen.add_argument("--seed", type=int, default=0, help="Generator seed")
    gen.add_argument("--output", "-o", default=str(OUTPUT_DIR), help="Output directory")
    gen.add_argument("--prefix", default='scenario', help="File name prefix")
    gen.set_defaults(func=cmd_generate)

    test = sub.add_parser("test", help="Run the tolerance CATE test")
    _add_input_args(test)
    _add_test_args(test)
    test.add_argument("--delta", type=float, default=0.0, help="Constant tolerance δ")
    test.add_argument("--bounds-csv", help="CSV with tau_lower, tau_upper columns per trial row")
    test.add_argument("--trace", action="store_true", help="Include the per-epoch |T| trace")
    test.set_defaults(func=cmd_test)

    lb = sub.add_parser("lower-bound", help="Estimate the lower bound on the maximum subgroup bias")
    _add_input_args(lb)
    _add_test_args(lb, restarts=DEFAULT_RESTARTS)
    lb.add_argument("--delta-max", type=float, help="Upper end of the δ grid (default: 4 max |τ_obs|)")
    lb.add_argument("--grid-steps", type=int, default=DEFAULT_GRID_STEPS, help="Coarse grid points")
    lb.add_argument("--refine", type=int, default=DEFAULT_REFINE_ITERS, help="Bisection rounds")
    lb.add_argument("--delta-c", type=float, help="Critical value for the benchmark verdict")
    lb.add_argument("--critical-group", help="Compute δ_c as |mean τ_obs| over column=value")
    lb.add_argument("--witness-groups", help="Comma-separated columns to read group biases for")
    lb.add_argument("--witness-extremes", type=float, metavar="FRACTION",
                    help="Report biases of the top and bottom FRACTION of witness values")
    lb.add_argument("--ate", action="store_true", help="Also report the ATE-test lower bound")
    lb.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP, help="Bootstrap samples for --ate")
    lb.add_argument("--trace-csv", help="Write the lower-bound grid trace to this CSV file")
    lb.set_defaults(func=cmd_lower_bound)

    plan = sub.add_parser("plan", help="Run a Monte Carlo experiment plan")
    _add_scenario_args(plan)
    _add_test_args(plan)
    plan.add_argument("--axis", required=True, choices=sorted(set(AXIS_NAMES) | set(AXIS_NAMES.values())))
    plan.add_argument("--values", required=True, help="Comma-separated axis values")
    plan.add_argument("--reps", type=int, default=5, help="Replications per axis value")
    plan.add_argument("--tests", default='cate', help="Comma-separated tests: cate, ate, cate0, ate0")
    plan.add_argument("--delta", type=float, default=0.0, help="Tolerance δ for the cate and ate tests")
    plan.add_argument("--lower-bound", action="store_true", help="Also estimate δ_lb per replication")
    plan.add_argument("--delta-max", type=float, help="Upper end of the δ grid for --lower-bound")
    plan.add_argument("--lb-restarts", type=int, default=DEFAULT_RESTARTS,
                      help="Optimizer restarts at each lower-bound grid point")
    plan.add_argument("--oracle-nuisance", action="store_true", help="Use the true τ_obs instead of a fit")
    plan.add_argument("--bootstrap", type=int, default=DEFAULT_BOOTSTRAP, help="Bootstrap samples for ate tests")
    plan.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker processes")
    plan.add_argument("--output", "-o", default=str(OUTPUT_DIR), help="Output directory")
    plan.add_argument("--prefix", default='plan', help="File name prefix")
    plan.set_defaults(func=cmd_plan)

    growth = sub.add_parser("growth", help="Check the √n growth of |T| under an alternative")
    _add_scenario_args(growth)
    growth.add_argument("--n-values", default='500,2000,8000', help="Comma-separated trial sizes")
    growth.add_argument("--reps", type=int, default=5, help="Replications per trial size")
    growth.add_argument("--delta", type=float, default=0.0, help="Tolerance δ")
    growth.add_argument("--function-class", choices=list(FUNCTION_CLASSES), default=DEFAULT_FUNCTION_CLASS)
    growth.add_argument("--epochs", type=int, help="Optimization epochs")
    growth.add_argument("--oracle-nuisance", action="store_true", help="Use the true τ_obs instead of a fit")
    growth.add_argument("--seed", type=int, default=0, help="Base seed")
    growth.add_argument("--threads", type=int, default=DEFAULT_THREADS, help="Worker processes")
    growth.set_defaults(func=cmd_growth)
    return parser


def main(argv=None):
    """
    Parse arguments, run one sub-command and return its exit code.

    stdout carries only the JSON report; progress goes to stderr.
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return e.code

    stdout = sys.stdout
    report_file = getattr(args, 'output', None) if args.command in ('test', 'lower-bound') else None
    try:
        with contextlib.redirect_stdout(sys.stderr):
            _handle_cache_flags(args)
            report, exit_code = args.func(args)
        emit(finalize_report(report), report_file, stream=stdout)
        return exit_code
    except BenchmarkError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except pd.errors.ParserError as e:
        print(f"Error: could not parse input: {e}", file=sys.stderr)
        return DataParseError.exit_code
    except OSError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
