"""Non-negative least squares by the Lawson-Hanson active set method."""

import numpy as np

from .errors import DimensionMismatch


def nnls(design, target, max_iter=None, tol=None):
    """Solve ``min_{w >= 0} ||design @ w - target||^2``.

    Returns the KKT-optimal weight vector: the residual gradient is (up to
    `tol`) zero on strictly positive coordinates and nonnegative on zero
    coordinates.
    """
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    if X.ndim != 2 or y.ndim != 1 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"design {X.shape} incompatible with target {y.shape}")
    m, n = X.shape
    if max_iter is None:
        max_iter = 5 * n
    if tol is None:
        tol = 10 * np.finfo(float).eps * max(m, n) * max(1.0, float(np.abs(y).max(initial=0.0)))

    w = np.zeros(n)
    passive = np.zeros(n, dtype=bool)
    resid = y.copy()
    grad = X.T @ resid  # negative gradient of the objective

    for _ in range(max_iter):
        candidates = ~passive & (grad > tol)
        if not candidates.any():
            break
        j = int(np.argmax(np.where(candidates, grad, -np.inf)))
        passive[j] = True

        # Inner loop: least squares on the passive set, stepping back whenever
        # a passive coordinate would go nonpositive.
        while True:
            idx = np.flatnonzero(passive)
            z = np.zeros(n)
            z[idx], *_ = np.linalg.lstsq(X[:, idx], y, rcond=None)
            if (z[idx] > tol).all():
                w = z
                break
            bad = idx[z[idx] <= tol]
            ratios = w[bad] / (w[bad] - z[bad])
            alpha = ratios.min()
            w = w + alpha * (z - w)
            passive[np.abs(w) <= tol] = False
            w[~passive] = 0.0

        resid = y - X @ w
        grad = X.T @ resid

    w[w < 0] = 0.0
    return w


def nnls_bruteforce(design, target):
    """Exhaustive search over all active sets; oracle for small problems."""
    X = np.asarray(design, dtype=float)
    y = np.asarray(target, dtype=float)
    n = X.shape[1]
    best_w, best_obj = np.zeros(n), float(y @ y)
    for mask in range(1, 1 << n):
        idx = [j for j in range(n) if mask >> j & 1]
        sol, *_ = np.linalg.lstsq(X[:, idx], y, rcond=None)
        if (sol < 0).any():
            continue
        w = np.zeros(n)
        w[idx] = sol
        r = y - X @ w
        obj = float(r @ r)
        if obj < best_obj - 1e-15:
            best_obj, best_w = obj, w
    return best_w, best_obj
