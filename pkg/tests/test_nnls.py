"""Nonnegative least squares against the exhaustive active-set oracle."""

import numpy as np
import pytest

from qrlob.errors import DimensionMismatch
from qrlob.nnls import nnls, nnls_bruteforce


def objective(X, y, w):
    r = y - X @ w
    return float(r @ r)


def test_identity_design_nonnegative_target():
    y = np.array([1.0, 0.5, 2.0])
    w = nnls(np.eye(3), y)
    assert np.allclose(w, y)


def test_identity_design_negative_entries_clipped():
    y = np.array([1.0, -0.5, 2.0])
    w = nnls(np.eye(3), y)
    assert np.allclose(w, [1.0, 0.0, 2.0])


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        nnls(np.eye(3), np.ones(4))


def test_random_problems_match_bruteforce():
    rng = np.random.default_rng(42)
    for _ in range(200):
        X = rng.normal(size=(6, 3))
        y = rng.normal(size=6)
        w = nnls(X, y)
        w_star, obj_star = nnls_bruteforce(X, y)
        assert (w >= 0).all()
        assert objective(X, y, w) <= obj_star + 1e-10


def test_kkt_conditions():
    rng = np.random.default_rng(7)
    for _ in range(50):
        X = rng.normal(size=(20, 6))
        y = rng.normal(size=20)
        w = nnls(X, y)
        grad = X.T @ (X @ w - y)  # gradient of 0.5*||Xw-y||^2 up to factor 2
        tol = 1e-8 * max(1.0, float(np.abs(grad).max()))
        assert (grad[w > 1e-12] <= tol + 1e-8).all() and (grad[w > 1e-12] >= -tol - 1e-8).all()
        assert (grad[w <= 1e-12] >= -1e-6).all()


def test_exactly_representable_target():
    rng = np.random.default_rng(3)
    X = np.abs(rng.normal(size=(30, 4)))
    w_true = np.array([0.5, 0.0, 1.5, 0.0])
    y = X @ w_true
    w = nnls(X, y)
    assert np.allclose(X @ w, y, atol=1e-9)
