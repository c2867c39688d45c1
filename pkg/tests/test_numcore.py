"""Numeric kernels checked against scipy/numpy reference implementations."""

import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy.special import logsumexp as scipy_logsumexp
from scipy.special import softmax as scipy_softmax

from quadmatch.numcore import (
    as_matrix,
    as_vector,
    frobenius_sq,
    hadamard,
    l2_normalize_rows,
    logsumexp_rows,
    matmul,
    outer,
    row_softmax,
)


class TestValidation:
    def test_as_matrix_accepts_nested_lists(self):
        m = as_matrix([[1.0, 2.0], [3.0, 4.0]])
        assert m.shape == (2, 2)
        assert m.dtype == np.float64

    def test_as_matrix_rejects_wrong_ndim(self):
        with pytest.raises(ValueError):
            as_matrix(np.zeros(3))
        with pytest.raises(ValueError):
            as_matrix(np.zeros((2, 2, 2)))

    def test_as_vector_rejects_matrix(self):
        with pytest.raises(ValueError):
            as_vector(np.zeros((2, 2)))

    def test_matmul_rejects_mismatched_inner_dims(self):
        with pytest.raises(ValueError):
            matmul(np.zeros((2, 3)), np.zeros((2, 3)))

    def test_hadamard_rejects_shape_mismatch(self):
        with pytest.raises(ValueError):
            hadamard(np.zeros((2, 3)), np.zeros((3, 2)))


class TestRowSoftmax:
    def test_matches_scipy(self, rng):
        for _ in range(20):
            s = rng.normal(size=(5, 7))
            tau = float(rng.uniform(0.05, 2.0))
            assert_allclose(row_softmax(s, tau), scipy_softmax(s / tau, axis=1),
                            rtol=1e-12, atol=1e-15)

    def test_rows_sum_to_one(self, rng):
        p = row_softmax(rng.normal(size=(8, 4)), 0.07)
        assert_allclose(p.sum(axis=1), np.ones(8), atol=1e-12)
        assert np.all(p > 0.0)

    def test_shift_invariance(self, rng):
        s = rng.normal(size=(4, 6))
        shifted = s + rng.normal(size=(4, 1))  # constant per row
        assert_allclose(row_softmax(s, 0.3), row_softmax(shifted, 0.3), atol=1e-12)

    def test_stable_for_large_logits_and_small_tau(self):
        s = np.array([[1e4, -1e4, 0.0]])
        p = row_softmax(s, 0.01)
        assert np.all(np.isfinite(p))
        assert_allclose(p[0, 0], 1.0, atol=1e-12)

    def test_rejects_nonpositive_tau(self):
        with pytest.raises(ValueError):
            row_softmax(np.eye(2), 0.0)
        with pytest.raises(ValueError):
            row_softmax(np.eye(2), -0.1)


class TestLogsumexpRows:
    def test_matches_scipy(self, rng):
        for _ in range(20):
            s = rng.normal(size=(6, 5))
            tau = float(rng.uniform(0.05, 2.0))
            expected = tau * scipy_logsumexp(s / tau, axis=1)
            assert_allclose(logsumexp_rows(s, tau), expected, rtol=1e-12, atol=1e-12)

    def test_upper_bounds_row_max(self, rng):
        s = rng.normal(size=(5, 8))
        for tau in (1.0, 0.1, 0.01):
            assert np.all(logsumexp_rows(s, tau) >= s.max(axis=1))

    def test_approaches_row_max_as_tau_shrinks(self, rng):
        s = rng.normal(size=(4, 4))
        gap = logsumexp_rows(s, 1e-4) - s.max(axis=1)
        assert np.all(gap < 1e-3)

    def test_stable_for_extreme_values(self):
        s = np.array([[1e6, 1e6 - 1.0]])
        out = logsumexp_rows(s, 0.07)
        assert np.isfinite(out).all()
        assert out[0] >= 1e6


class TestElementwiseHelpers:
    def test_frobenius_sq_matches_numpy(self, rng):
        a = rng.normal(size=(7, 3))
        assert_allclose(frobenius_sq(a), np.linalg.norm(a) ** 2, rtol=1e-12)

    def test_outer_matches_numpy(self, rng):
        u, v = rng.normal(size=4), rng.normal(size=6)
        assert_allclose(outer(u, v), np.outer(u, v))

    def test_hadamard_matches_numpy(self, rng):
        a, b = rng.normal(size=(3, 5)), rng.normal(size=(3, 5))
        assert_allclose(hadamard(a, b), a * b)

    def test_matmul_matches_numpy(self, rng):
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(3, 6))
        assert_allclose(matmul(a, b), a @ b)


class TestL2NormalizeRows:
    def test_unit_norms(self, rng):
        out = l2_normalize_rows(rng.normal(size=(9, 5)))
        assert_allclose(np.linalg.norm(out, axis=1), np.ones(9), atol=1e-12)

    def test_preserves_direction(self, rng):
        a = rng.normal(size=(4, 3))
        out = l2_normalize_rows(a)
        # Each output row is a positive multiple of its input row.
        scales = np.linalg.norm(a, axis=1)
        assert_allclose(out * scales[:, None], a, atol=1e-12)

    def test_idempotent(self, rng):
        once = l2_normalize_rows(rng.normal(size=(5, 4)))
        assert_allclose(l2_normalize_rows(once), once, atol=1e-12)

    def test_zero_row_rejected(self):
        a = np.ones((3, 2))
        a[1] = 0.0
        with pytest.raises(ValueError):
            l2_normalize_rows(a)
