import numpy as np
from dataclasses import dataclass
from scipy.spatial.distance import cdist

from dataset import FeatureSubset
from errors import ConfigurationError, ShapeError

KERNEL_FAMILIES = ('laplacian', 'gaussian')


@dataclass(frozen=True)
class KernelSpec:
    family: str = 'laplacian'
    scale: float = 1.0

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ConfigurationError(f"Unknown kernel family '{self.family}'")
        if not self.scale > 0:
            raise ConfigurationError(f"Kernel scale must be positive, got {self.scale}")

    def from_distances(self, dist):
        # laplacian takes L1 distances, gaussian squared L2 distances
        if self.family == 'laplacian':
            return np.exp(-dist / self.scale)
        return np.exp(-dist / (2 * self.scale ** 2))

    @property
    def metric(self):
        return 'cityblock' if self.family == 'laplacian' else 'sqeuclidean'


@dataclass
class CrossGram:
    values: np.ndarray
    kernel: KernelSpec
    subset: FeatureSubset

    @property
    def shape(self):
        return self.values.shape


def eval_kernel(spec, u, v):
    """Evaluate k(u, v) for two vectors of equal length."""
    u = np.atleast_1d(np.asarray(u, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    if u.shape != v.shape:
        raise ShapeError(f"Kernel arguments differ in dimension: {u.shape} vs {v.shape}")
    if spec.family == 'laplacian':
        dist = np.sum(np.abs(u - v))
    else:
        dist = np.sum((u - v) ** 2)
    return float(spec.from_distances(dist))


def cross_gram(X1, X2, subset, spec):
    """
    Kernel matrix between the rows of X1 and X2 restricted to the features in `subset`.

    The empty subset gives the constant kernel k = 1.
    """
    X1 = np.atleast_2d(np.asarray(X1, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X1.shape[1] != X2.shape[1]:
        raise ShapeError(f"Row dimensions differ: {X1.shape[1]} vs {X2.shape[1]}")
    subset.check(X1.shape[1])
    if len(subset) == 0:
        return CrossGram(np.ones((len(X1), len(X2))), spec, subset)
    dist = cdist(subset.restrict(X1), subset.restrict(X2), spec.metric)
    return CrossGram(spec.from_distances(dist), spec, subset)
