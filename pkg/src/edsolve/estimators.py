"""Estimator-style wrappers (``fit`` on an energy decomposition, then
``transform``/``predict`` on right-hand sides).

Right-hand sides are vectors of length ``n`` or arrays of shape ``(n, k)``
holding ``k`` columns.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .coarse import compress_apply, construct_phi, exact_psi
from .energy import EnergyDecomposition, assemble
from .localize import construct_tilde_psi
from .mmd import MMDConfig, mmd_decompose, mmd_solve
from .partition import pair_cluster


def _check_dec(dec):
    if not isinstance(dec, EnergyDecomposition):
        raise TypeError(f"expected an EnergyDecomposition, got {type(dec).__name__}")
    return dec


def _check_rhs(B, n):
    B = np.asarray(B, dtype=float)
    if B.ndim not in (1, 2) or B.shape[0] != n:
        raise ValueError(f"right-hand side must have {n} rows, got shape {B.shape}")
    if not np.all(np.isfinite(B)):
        raise ValueError("right-hand side contains non-finite values")
    return B


def _columnwise(fn, B):
    if B.ndim == 1:
        return fn(B)
    return np.column_stack([fn(B[:, k]) for k in range(B.shape[1])])


class PairClustering(BaseEstimator):
    """Adaptive partition with error factor at most ``eps`` and
    ``delta * eps**2 <= c`` on every patch."""

    def __init__(self, eps=0.05, c=50.0, q=1, size_weighted=False):
        self.eps = eps
        self.c = c
        self.q = q
        self.size_weighted = size_weighted

    def fit(self, dec, y=None):
        dec = _check_dec(dec)
        res = pair_cluster(dec, self.eps, self.c, self.q, self.size_weighted)
        self.partition_ = res.partition
        self.phi_blocks_ = res.phi_blocks
        self.patch_eps_ = res.eps
        self.patch_delta_ = res.delta
        self.error_factor_ = res.error_factor
        self.condition_factor_ = res.condition_factor
        self.labels_ = res.partition.patch_of.copy()
        self.n_features_in_ = dec.n
        return self

    def fit_predict(self, dec, y=None):
        return self.fit(dec).labels_


class OperatorCompressor(TransformerMixin, BaseEstimator):
    """Compressed inverse ``Psi A_st^{-1} Psi^T`` on an adaptive coarse space.

    ``transform`` restricts to coarse coefficients (``Psi^T b``),
    ``inverse_transform`` lifts them back, ``predict`` applies the
    compressed inverse.  ``eps_loc=None`` uses ``eps``; ``localize=False``
    uses the exact basis (dense solves, small problems only).
    """

    def __init__(self, eps=0.05, c=50.0, q=1, eps_loc=None, localize=True, threads=1):
        self.eps = eps
        self.c = c
        self.q = q
        self.eps_loc = eps_loc
        self.localize = localize
        self.threads = threads

    def fit(self, dec, y=None):
        dec = _check_dec(dec)
        A = assemble(dec)
        res = pair_cluster(dec, self.eps, self.c, self.q)
        coarse = construct_phi(dec, res.partition, self.q, res.phi_blocks, res.eps)
        if self.localize:
            eps_loc = self.eps if self.eps_loc is None else self.eps_loc
            basis = construct_tilde_psi(A, dec, coarse, eps_loc, threads=self.threads)
            self.basis_ = basis
            self.compressed_ = basis.compressed(A)
        else:
            self.compressed_ = exact_psi(A, coarse)
        self.A_ = A
        self.coarse_ = coarse
        self.partition_ = res.partition
        self.error_factor_ = res.error_factor
        self.condition_factor_ = res.condition_factor
        self.n_features_in_ = dec.n
        self.n_components_ = coarse.N
        return self

    def transform(self, B):
        check_is_fitted(self, "compressed_")
        B = _check_rhs(B, self.n_features_in_)
        return np.asarray(self.compressed_.Psi.T @ B)

    def inverse_transform(self, Y):
        check_is_fitted(self, "compressed_")
        Y = _check_rhs(Y, self.n_components_)
        return np.asarray(self.compressed_.Psi @ Y)

    def predict(self, B):
        check_is_fitted(self, "compressed_")
        B = _check_rhs(B, self.n_features_in_)
        return _columnwise(lambda b: compress_apply(self.compressed_, b), B)


class MultiresolutionSolver(BaseEstimator):
    """Multilevel solver for ``A x = b``; ``fit`` builds the hierarchy."""

    def __init__(self, eps2_schedule=(1e-5, 1e-4, 1e-3), c=50.0, q=1, loc_mode="relaxed",
                 level_tol=1e-6, compensate=True, comp_tol=1e-5, threads=1):
        self.eps2_schedule = eps2_schedule
        self.c = c
        self.q = q
        self.loc_mode = loc_mode
        self.level_tol = level_tol
        self.compensate = compensate
        self.comp_tol = comp_tol
        self.threads = threads

    def fit(self, dec, y=None):
        dec = _check_dec(dec)
        cfg = MMDConfig(list(self.eps2_schedule), c=self.c, q=self.q, loc_mode=self.loc_mode,
                        threads=self.threads)
        self.hierarchy_ = mmd_decompose(dec, cfg)
        self.n_features_in_ = dec.n
        return self

    def predict(self, B):
        check_is_fitted(self, "hierarchy_")
        B = _check_rhs(B, self.n_features_in_)
        self.last_results_ = []

        def one(b):
            r = mmd_solve(self.hierarchy_, b, self.level_tol, self.compensate, self.comp_tol)
            self.last_results_.append(r)
            return r.x

        return _columnwise(one, B)
