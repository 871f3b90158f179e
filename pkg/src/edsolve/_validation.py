"""Input checks shared across the package."""

from __future__ import annotations

import numpy as np

SYM_TOL = 1e-12


def check_vector(x, n=None, name="x"):
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional, got shape {x.shape}")
    if n is not None and x.shape[0] != n:
        raise ValueError(f"{name} has length {x.shape[0]}, expected {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite values")
    return x


def check_square(M, name="M"):
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be a square matrix, got shape {M.shape}")
    return M


def check_symmetric(M, tol=SYM_TOL, name="M"):
    M = check_square(M, name)
    scale = max(1.0, float(np.max(np.abs(M)))) if M.size else 1.0
    if M.size and np.max(np.abs(M - M.T)) > tol * scale:
        raise ValueError(f"{name} is not symmetric")
    return M


def check_index_set(S, n, name="S"):
    """Return S as a sorted int array, rejecting duplicates and out-of-range entries."""
    S = np.asarray(S, dtype=np.int64).ravel()
    if S.size and (S.min() < 0 or S.max() >= n):
        raise IndexError(f"{name} has indices outside [0, {n})")
    out = np.unique(S)
    if out.size != S.size:
        raise ValueError(f"{name} contains duplicate indices")
    return out


def check_positive(value, name):
    if not (value > 0):
        raise ValueError(f"{name} must be positive, got {value}")
    return value
