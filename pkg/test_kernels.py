"""
Tests for the kernel families and the cross gram matrix.
"""

import numpy as np
import pytest

from dataset import FeatureSubset
from errors import ConfigurationError, ShapeError
from kernels import KernelSpec, cross_gram, eval_kernel


def brute_gram(X1, X2, indices, spec):
    return np.array([[eval_kernel(spec, u[list(indices)], v[list(indices)]) for v in X2] for u in X1])


@pytest.mark.parametrize("family", ['laplacian', 'gaussian'])
@pytest.mark.parametrize("scale", [0.5, 1.0, 3.0])
def test_cross_gram_matches_pairwise_loop(family, scale):
    rng = np.random.default_rng(4)
    X1, X2 = rng.normal(size=(7, 5)), rng.normal(size=(6, 5))
    spec = KernelSpec(family, scale)
    subset = FeatureSubset((0, 2, 3))
    gram = cross_gram(X1, X2, subset, spec)
    assert gram.shape == (7, 6)
    np.testing.assert_allclose(gram.values, brute_gram(X1, X2, subset.indices, spec), atol=1e-12)


def test_laplacian_uses_l1_distance():
    spec = KernelSpec('laplacian', 2.0)
    assert eval_kernel(spec, [0.0, 0.0], [1.0, -2.0]) == pytest.approx(np.exp(-3.0 / 2.0))


def test_gaussian_uses_squared_distance():
    spec = KernelSpec('gaussian', 1.0)
    assert eval_kernel(spec, [0.0, 0.0], [1.0, 1.0]) == pytest.approx(np.exp(-1.0))


def test_kernel_is_one_on_the_diagonal():
    X = np.random.default_rng(0).normal(size=(5, 3))
    gram = cross_gram(X, X, FeatureSubset.all(3), KernelSpec())
    np.testing.assert_allclose(np.diag(gram.values), 1.0)


def test_empty_subset_gives_constant_kernel():
    X = np.random.default_rng(1).normal(size=(4, 3))
    gram = cross_gram(X, X[:3], FeatureSubset.none(), KernelSpec())
    np.testing.assert_array_equal(gram.values, np.ones((4, 3)))


def test_dimension_mismatch():
    with pytest.raises(ShapeError):
        cross_gram(np.zeros((2, 3)), np.zeros((2, 4)), FeatureSubset.none(), KernelSpec())
    with pytest.raises(ShapeError):
        eval_kernel(KernelSpec(), [0.0, 1.0], [0.0])


@pytest.mark.parametrize("family, scale", [('cosine', 1.0), ('laplacian', 0.0), ('gaussian', -1.0)])
def test_invalid_kernel_spec(family, scale):
    with pytest.raises(ConfigurationError):
        KernelSpec(family, scale)
