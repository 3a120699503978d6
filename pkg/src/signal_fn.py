import numpy as np
from dataclasses import dataclass

from errors import DomainError, ShapeError


@dataclass
class SignalParts:
    """
    Signal function ψ_g = P − [g τ_+ + (1 − g) τ_−] in (base, span) form:
    ψ = base − g · span with base = P − τ_− and span = τ_+ − τ_−.
    """
    pseudo: np.ndarray
    base: np.ndarray
    span: np.ndarray

    def take(self, idx):
        return SignalParts(self.pseudo[idx], self.base[idx], self.span[idx])

    def __len__(self):
        return len(self.base)


def pseudo_outcome(trial):
    """IPW pseudo-outcome P_i = Y_i (T_i / π − (1 − T_i) / (1 − π))."""
    pi = trial.pi
    return trial.y * (trial.t / pi - (1 - trial.t) / (1 - pi))


def build_parts(trial, bounds):
    pseudo = pseudo_outcome(trial)
    if len(bounds.lower) != len(pseudo):
        raise ShapeError(f"Bounds cover {len(bounds.lower)} rows but the trial has {len(pseudo)}")
    return SignalParts(pseudo, pseudo - bounds.lower, bounds.upper - bounds.lower)


def signal_values(parts, g_values):
    g_values = np.asarray(g_values, dtype=float)
    if g_values.shape != parts.base.shape:
        raise ShapeError(f"g has shape {g_values.shape}, expected {parts.base.shape}")
    if np.any(g_values < 0) or np.any(g_values > 1):
        raise DomainError("g values must lie in [0, 1]")
    return parts.base - g_values * parts.span
