"""
Function class G for the interpolation function g: R^|J| -> [0, 1],
exact gradients of the studentized cross U-statistic through ψ_g, the Adam
optimization loop, and the witness-function readout.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from crossu import cross_u
from errors import ConfigurationError, DegenerateVarianceError, DomainError, OptimizationError, ShapeError
from signal_fn import signal_values

ARCHITECTURES = ('constant', 'linear', 'mlp', 'free')


class BiasModel:
    """
    Parametric g with a sigmoid output.

    'constant' learns a single value, 'linear' is sigmoid(w·x + b), 'mlp' uses
    tanh hidden layers, and 'free' keeps one parameter per row (an
    unrestricted g used as an oracle). With |J| = 0 every parametric
    architecture reduces to 'constant'.
    """

    def __init__(self, architecture, input_dim, widths=(), n_rows=None, params=None, seed=0):
        if architecture not in ARCHITECTURES:
            raise ConfigurationError(f"Unknown architecture '{architecture}'")
        if input_dim == 0 and architecture in ('linear', 'mlp'):
            architecture = 'constant'
        if architecture == 'free' and not n_rows:
            raise ConfigurationError("A free model needs the number of rows it covers")
        self.architecture = architecture
        self.input_dim = int(input_dim)
        self.widths = [int(w) for w in widths] if architecture == 'mlp' else []
        self.n_rows = int(n_rows) if architecture == 'free' else None
        self.layers = self._layer_shapes()
        self.n_params = sum(i * o + o for i, o in self.layers)
        if params is None:
            params = self.initial_parameters(seed)
        params = np.asarray(params, dtype=float).copy()
        if params.shape != (self.n_params,):
            raise ShapeError(f"{architecture} model needs {self.n_params} parameters, got {params.shape}")
        self.params = params

    def _layer_shapes(self):
        if self.architecture == 'constant':
            return [(0, 1)]
        if self.architecture == 'linear':
            return [(self.input_dim, 1)]
        if self.architecture == 'free':
            return [(0, self.n_rows)]
        sizes = [self.input_dim] + self.widths + [1]
        return list(zip(sizes[:-1], sizes[1:]))

    def initial_parameters(self, seed):
        """Uniform(−1/√fan_in, 1/√fan_in) per layer."""
        rng = np.random.default_rng(seed)
        chunks = []
        for fan_in, fan_out in self.layers:
            bound = 1.0 / math.sqrt(max(fan_in, 1))
            chunks.append(rng.uniform(-bound, bound, fan_in * fan_out + fan_out))
        return np.concatenate(chunks)

    def fresh(self, seed):
        return BiasModel(self.architecture, self.input_dim, self.widths, self.n_rows, seed=seed)

    def with_params(self, params):
        return BiasModel(self.architecture, self.input_dim, self.widths, self.n_rows, params=params)

    def copy(self):
        return self.with_params(self.params)

    def _unpack(self, params):
        weights = []
        offset = 0
        for fan_in, fan_out in self.layers:
            W = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset:offset + fan_out]
            offset += fan_out
            weights.append((W, b))
        return weights

    def _check_rows(self, XJ):
        XJ = np.asarray(XJ, dtype=float)
        if XJ.ndim == 1:
            XJ = XJ[:, None] if self.input_dim == 1 else XJ[None, :]
        if XJ.shape[1] != self.input_dim:
            raise ShapeError(f"Model expects {self.input_dim} features, got {XJ.shape[1]}")
        if self.architecture == 'free' and len(XJ) != self.n_rows:
            raise ShapeError(f"Free model covers {self.n_rows} rows, got {len(XJ)}")
        return XJ

    def forward_with_cache(self, XJ, params=None):
        XJ = self._check_rows(XJ)
        weights = self._unpack(self.params if params is None else params)
        if self.architecture == 'free':
            return expit(weights[0][1]), []
        a = XJ[:, :weights[0][0].shape[0]]
        inputs = []
        for k, (W, b) in enumerate(weights):
            inputs.append(a)
            z = a @ W + b
            a = np.tanh(z) if k < len(weights) - 1 else z
        g = expit(a[:, 0])
        return g, inputs

    def forward(self, XJ, params=None):
        return self.forward_with_cache(XJ, params)[0]

    def backward(self, g, inputs, dg, params=None):
        """Reverse-mode gradient of a scalar with ∂/∂g = dg, flattened like the parameters."""
        weights = self._unpack(self.params if params is None else params)
        dz = dg * g * (1 - g)
        if self.architecture == 'free':
            return np.concatenate([np.zeros(0), dz])
        dz = dz[:, None]
        grads = [None] * len(weights)
        for k in range(len(weights) - 1, -1, -1):
            W, _ = weights[k]
            a_prev = inputs[k]
            grads[k] = (a_prev.T @ dz, dz.sum(axis=0))
            if k > 0:
                dz = (dz @ W.T) * (1 - a_prev ** 2)
        return np.concatenate([np.concatenate([gW.ravel(), gb]) for gW, gb in grads])

    def to_dict(self):
        return {
            'architecture': self.architecture,
            'input_dim': self.input_dim,
            'widths': self.widths,
            'n_rows': self.n_rows,
            'parameters': self.params.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(data['architecture'], data['input_dim'], data.get('widths', []),
                   data.get('n_rows'), params=data['parameters'])


def build_model(function_class, input_dim, seed=0):
    """Create a model from a FUNCTION_CLASSES entry (dict with architecture and widths)."""
    return BiasModel(function_class['architecture'], input_dim, function_class.get('widths', []), seed=seed)


def save_model(model, path):
    with open(path, 'w') as f:
        json.dump(model.to_dict(), f, indent=2)


def load_model(path):
    with open(path, 'r') as f:
        return BiasModel.from_dict(json.load(f))


@dataclass
class OptConfig:
    epochs: int = 6000
    learning_rate: float = 0.1
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    record_trace: bool = False
    restarts: int = 1
    stop_below: float = None

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigurationError(f"epochs must be at least 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigurationError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.restarts < 1:
            raise ConfigurationError(f"restarts must be at least 1, got {self.restarts}")


@dataclass
class OptResult:
    min_abs_statistic: float
    best_parameters: np.ndarray
    epoch_of_min: int
    restart_of_min: int = 0
    trace: list = None
    restart_traces: list = field(default_factory=list)
    model: BiasModel = None
    cross: object = None


def _used_rows(split):
    I1, I2 = split
    if len(I1) != len(I2):
        raise ShapeError(f"Split halves differ in size: {len(I1)} vs {len(I2)}")
    return np.concatenate([I1, I2]), len(I1)


def objective(model, parts, split, gram, XJ, params=None):
    """
    |T(g)| with its exact gradient and the underlying cross U-statistic.

    With m = |I1|, T = √m Ĥ²/σ̂ and
    ∂T/∂h_i = (√m / (m σ̂)) (1 − Ĥ² (h_i − Ĥ²) / σ̂²). The chain continues
    through h_i = ψ1_i f_i, f = K ψ2 / m, ∂ψ/∂g = −span and the network.
    """
    idx, m = _used_rows(split)
    sub = parts.take(idx)
    g, inputs = model.forward_with_cache(np.asarray(XJ)[idx], params)
    psi = signal_values(sub, g)
    psi1, psi2 = psi[:m], psi[m:]
    result = cross_u(psi1, psi2, gram)

    K = getattr(gram, 'values', gram)
    H, sigma = result.hhat2, result.sigma_hat
    a = (math.sqrt(m) / (m * sigma)) * (1 - H * (result.h_values - H) / sigma ** 2)
    d_psi = np.concatenate([a * result.f_values, K.T @ (a * psi1) / m])
    sign = float(np.sign(result.studentized))
    dg = -sub.span * d_psi * sign
    grad = model.backward(g, inputs, dg, params)
    return abs(result.studentized), grad, result


def statistic_and_gradient(model, parts, split, gram, XJ):
    """
    Absolute studentized statistic |T(g)| and its gradient w.r.t. the model parameters.

    Args:
        model: BiasModel
        parts: SignalParts on all trial rows
        split: (I1, I2) index arrays into the trial rows
        gram: CrossGram between X[I1] and X[I2] on the feature subset
        XJ: Trial covariates restricted to the feature subset

    Returns:
        (abs_T, grad)
    """
    abs_t, grad, _ = objective(model, parts, split, gram, XJ)
    return abs_t, grad


def _adam_run(model, parts, split, gram, XJ, cfg, constant_signal):
    params = model.params.copy()
    m_t = np.zeros_like(params)
    v_t = np.zeros_like(params)
    best = (math.inf, params.copy(), -1, None)
    trace = []
    epochs = 1 if constant_signal else cfg.epochs
    for epoch in range(epochs):
        try:
            value, grad, cross = objective(model, parts, split, gram, XJ, params)
        except DegenerateVarianceError:
            if constant_signal:
                raise
            # parameters cannot move without a gradient
            trace.append(math.nan)
            break
        trace.append(value)
        if value < best[0]:
            best = (value, params.copy(), epoch, cross)
        if cfg.stop_below is not None and value < cfg.stop_below:
            break
        step = epoch + 1
        m_t = cfg.beta1 * m_t + (1 - cfg.beta1) * grad
        v_t = cfg.beta2 * v_t + (1 - cfg.beta2) * grad ** 2
        m_hat = m_t / (1 - cfg.beta1 ** step)
        v_hat = v_t / (1 - cfg.beta2 ** step)
        params = params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
    return best, trace


def optimize(model0, parts, split, gram, XJ, cfg=None, verbose=False):
    """
    Minimize |T(g)| over the model parameters with Adam.

    Records the smallest |T| seen over all epochs and restarts (not the value
    at the last epoch). Restart 0 starts from model0; restart r > 0 starts
    from a fresh initialization seeded by (cfg.seed, r).

    Returns:
        OptResult

    Raises:
        OptimizationError: if every evaluation had zero variance
    """
    cfg = cfg or OptConfig()
    idx, _ = _used_rows(split)
    constant_signal = not np.any(parts.span[idx])

    overall = None
    traces = []
    restarts = 1 if constant_signal else cfg.restarts
    for r in range(restarts):
        if r == 0:
            model = model0.copy()
        else:
            seed = int(np.random.SeedSequence([cfg.seed, r]).generate_state(1)[0])
            model = model0.fresh(seed)
        (value, params, epoch, cross), trace = _adam_run(model, parts, split, gram, XJ, cfg, constant_signal)
        traces.append(trace)
        if verbose:
            print(f"Restart {r + 1}/{restarts}: min |T| = {value:.4f} at epoch {epoch}")
        if overall is None or value < overall[0]:
            overall = (value, params, epoch, r, cross)
        if cfg.stop_below is not None and value < cfg.stop_below:
            break

    value, params, epoch, r, cross = overall
    if not math.isfinite(value):
        raise OptimizationError("Every optimization step had a degenerate variance")
    return OptResult(
        min_abs_statistic=value,
        best_parameters=params,
        epoch_of_min=epoch,
        restart_of_min=r,
        trace=traces[r] if cfg.record_trace else None,
        restart_traces=traces if cfg.record_trace else [],
        model=model0.with_params(params),
        cross=cross,
    )


def witness_bias(model, delta_lb, group_mask, XJ_rows):
    """
    Witness readout for a group: δ_lb (2 · mean(ĝ over the group) − 1).

    The tolerance bounds are centred on τ_obs, so a positive value means the
    trial effect sits above the observational one (μ − τ_obs > 0). Use
    observational_bias for the Δ* = τ_obs − μ convention of the generator.
    """
    if delta_lb < 0:
        raise DomainError(f"delta_lb must be non-negative, got {delta_lb}")
    group_mask = np.asarray(group_mask, dtype=bool)
    if not group_mask.any():
        raise DomainError("Witness group is empty")
    g = model.forward(np.asarray(XJ_rows, dtype=float)[group_mask])
    return float(delta_lb * (2 * np.mean(g) - 1))


def observational_bias(model, delta_lb, group_mask, XJ_rows):
    """Estimated Δ* = τ_obs − μ of a group, the negated witness readout."""
    return -witness_bias(model, delta_lb, group_mask, XJ_rows)


def witness_extremes(model, delta_lb, XJ_rows, fraction=0.1):
    """
    Read the witness on the rows where ĝ is most extreme.

    Used when no subgroups are predefined: the rows with the top and the
    bottom `fraction` of ĝ values form two groups. Biases are reported as
    estimated Δ* = τ_obs − μ, so the high-ĝ group carries the most negative
    bias and the low-ĝ group the most positive one.

    Args:
        model: Optimized BiasModel
        delta_lb: Lower bound the model was fitted at
        XJ_rows: Feature-subset rows the model reads
        fraction: Share of rows in each tail, in (0, 0.5]

    Returns:
        dict: {'top': {...}, 'bottom': {...}}, each with the row mask, row
        count, mean ĝ and estimated bias
    """
    if not 0 < fraction <= 0.5:
        raise ConfigurationError(f"Witness fraction must lie in (0, 0.5], got {fraction}")
    XJ_rows = np.asarray(XJ_rows, dtype=float)
    g = model.forward(XJ_rows)
    size = max(1, int(round(fraction * len(g))))
    order = np.argsort(g, kind='stable')
    result = {}
    for name, rows in (('top', order[-size:]), ('bottom', order[:size])):
        mask = np.zeros(len(g), dtype=bool)
        mask[rows] = True
        result[name] = {
            'mask': mask,
            'rows': int(size),
            'mean_g': float(np.mean(g[mask])),
            'bias': observational_bias(model, delta_lb, mask, XJ_rows),
        }
    return result


def group_biases(model, delta_lb, XJ_rows, labels):
    """Estimated Δ* for every distinct label in `labels` (one label per row)."""
    labels = list(labels)
    result = {}
    for label in sorted(set(labels)):
        mask = np.array([lab == label for lab in labels])
        result[label] = observational_bias(model, delta_lb, mask, XJ_rows)
    return result
