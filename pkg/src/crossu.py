"""
Cross U-statistic, its variance estimate and the studentized test decision.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from errors import ConfigurationError, DegenerateVarianceError, ShapeError


@dataclass
class CrossUResult:
    h_values: np.ndarray
    f_values: np.ndarray
    hhat2: float
    sigma_hat: float
    m: int
    studentized: float


@dataclass
class Decision:
    statistic: float
    threshold: float
    reject: bool
    alpha: float
    p_value: float

    def to_dict(self):
        return {
            'statistic': self.statistic,
            'threshold': self.threshold,
            'reject': self.reject,
            'alpha': self.alpha,
            'p_value': self.p_value,
        }


def cross_u(psi1, psi2, gram):
    """
    Compute the cross U-statistic between the two halves of the trial.

    f_i = mean_j K_ij ψ2_j, h_i = ψ1_i f_i, Ĥ² = mean(h),
    σ̂² = mean(h²) − Ĥ², T = √m Ĥ² / σ̂.

    Args:
        psi1: Signal values on the first half I1
        psi2: Signal values on the second half I2
        gram: CrossGram (or matrix) of shape (|I1|, |I2|)

    Returns:
        CrossUResult

    Raises:
        DegenerateVarianceError: when σ̂ = 0
    """
    K = getattr(gram, 'values', gram)
    psi1 = np.asarray(psi1, dtype=float)
    psi2 = np.asarray(psi2, dtype=float)
    m = len(psi1)
    if K.shape != (m, len(psi2)) or len(psi2) != m:
        raise ShapeError(f"Halves of sizes {m} and {len(psi2)} do not match a gram of shape {K.shape}")

    f = K @ psi2 / m
    h = psi1 * f
    hhat2 = float(np.mean(h))
    variance = float(np.mean(h ** 2)) - hhat2 ** 2
    sigma = math.sqrt(variance) if variance > 0 else 0.0
    if sigma == 0.0:
        raise DegenerateVarianceError(
            "Cross U-statistic has zero variance; the signal is degenerate on this split"
        )
    return CrossUResult(h, f, hhat2, sigma, m, math.sqrt(m) * hhat2 / sigma)


def decide(abs_statistic, alpha):
    """Compare |T| with the (1 − α) quantile of the half-normal distribution."""
    if not 0 < alpha < 1:
        raise ConfigurationError(f"alpha must lie in (0, 1), got {alpha}")
    threshold = float(norm.ppf(1 - alpha / 2))
    p_value = float(2 * norm.sf(abs_statistic))
    return Decision(float(abs_statistic), threshold, bool(abs_statistic >= threshold), alpha, p_value)
