"""Numerical kernels: sparse symmetric storage, dense eigensolvers, Householder
frames, preconditioned conjugate gradients and dense test oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from ._validation import check_square, check_symmetric, check_vector


class IndefiniteOperatorError(ArithmeticError):
    """Raised when CG meets a direction of non-positive curvature."""


class ConvergenceError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# sparse symmetric matrices


@dataclass(frozen=True, eq=False)
class SparseSymMatrix:
    """Symmetric matrix in compressed-row form with both triangles stored.

    Column indices are strictly increasing within each row and explicit zeros
    are never stored.  Matrix-vector products are delegated to a cached
    ``scipy.sparse.csr_matrix`` view sharing the same arrays.
    """

    dim: int
    indptr: np.ndarray
    indices: np.ndarray
    data: np.ndarray
    _csr: sp.csr_matrix = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        csr = sp.csr_matrix((self.data, self.indices, self.indptr), shape=(self.dim, self.dim))
        object.__setattr__(self, "_csr", csr)

    @classmethod
    def from_coo(cls, rows, cols, vals, dim: int, check: bool = True) -> "SparseSymMatrix":
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        vals = np.asarray(vals, dtype=float)
        M = sp.coo_matrix((vals, (rows, cols)), shape=(dim, dim)).tocsr()
        return cls.from_scipy(M, check=check)

    @classmethod
    def from_scipy(cls, M, check: bool = True) -> "SparseSymMatrix":
        M = sp.csr_matrix(M, dtype=float, copy=True)
        if M.shape[0] != M.shape[1]:
            raise ValueError("matrix must be square")
        M.sum_duplicates()
        M.eliminate_zeros()
        M.sort_indices()
        out = cls(M.shape[0], M.indptr.astype(np.int64), M.indices.astype(np.int64), M.data)
        if check:
            out.validate()
        return out

    @classmethod
    def from_dense(cls, M) -> "SparseSymMatrix":
        return cls.from_scipy(sp.csr_matrix(check_symmetric(M)))

    def validate(self, rtol: float = 1e-12) -> None:
        M = self._csr
        diff = M - M.T
        if diff.nnz:
            scale = max(1.0, float(np.max(np.abs(M.data)))) if M.nnz else 1.0
            if np.max(np.abs(diff.data)) > rtol * scale:
                raise ValueError("matrix is not symmetric")
        if (M != 0).nnz != M.nnz:
            raise ValueError("explicit zeros stored")
        pattern = abs(M).astype(bool).astype(np.int8)
        if (pattern - pattern.T).count_nonzero():
            raise ValueError("matrix is not structurally symmetric")

    @property
    def nnz(self) -> int:
        return int(self.data.shape[0])

    @property
    def shape(self):
        return (self.dim, self.dim)

    def to_scipy(self) -> sp.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def matvec(self, x):
        return self._csr @ x

    def __matmul__(self, x):
        return self._csr @ x

    def principal_submatrix(self, S) -> np.ndarray:
        S = np.asarray(S, dtype=np.int64)
        return self._csr[S][:, S].toarray()


def spmv(A: SparseSymMatrix, x) -> np.ndarray:
    x = check_vector(x, A.dim)
    return A.matvec(x)


def as_operator(op) -> Callable[[np.ndarray], np.ndarray]:
    if callable(op) and not hasattr(op, "shape"):
        return op
    if isinstance(op, SparseSymMatrix):
        op = op.to_scipy()
    return lambda v: op @ v


# ---------------------------------------------------------------------------
# dense symmetric eigensolvers


def _fix_signs(V: np.ndarray) -> np.ndarray:
    """Flip columns so that the first non-negligible component is positive."""
    if V.size == 0:
        return V
    mags = np.abs(V)
    thresh = 1e-12 * np.maximum(mags.max(axis=0), 1e-300)
    first = np.argmax(mags > thresh, axis=0)
    signs = np.sign(V[first, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def jacobi_eigh(M, tol: float = 1e-15, max_sweeps: int = 100):
    """Cyclic Jacobi rotations; returns all eigenpairs in ascending order."""
    A = np.array(M, dtype=float)
    n = A.shape[0]
    V = np.eye(n)
    fro = np.linalg.norm(A)
    if n < 2 or fro == 0.0:
        return np.diag(A).copy(), V
    for _ in range(max_sweeps):
        off = np.linalg.norm(A - np.diag(np.diag(A)))
        if off <= tol * fro:
            break
        for p in range(n - 1):
            for r in range(p + 1, n):
                apr = A[p, r]
                if abs(apr) <= 1e-300:
                    continue
                theta = (A[r, r] - A[p, p]) / (2.0 * apr)
                t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0)) if theta != 0 else 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                ap = A[:, p].copy()
                ar = A[:, r].copy()
                A[:, p] = c * ap - s * ar
                A[:, r] = s * ap + c * ar
                ap = A[p, :].copy()
                ar = A[r, :].copy()
                A[p, :] = c * ap - s * ar
                A[r, :] = s * ap + c * ar
                vp = V[:, p].copy()
                V[:, p] = c * vp - s * V[:, r]
                V[:, r] = s * vp + c * V[:, r]
    else:
        raise ConvergenceError("Jacobi eigensolver did not converge")
    w = np.diag(A).copy()
    order = np.argsort(w, kind="stable")
    return w[order], V[:, order]


def dense_sym_eig(M, k: int | None = None, method: str = "jacobi"):
    """Smallest ``k`` eigenpairs of a dense symmetric matrix, ascending.

    ``method="jacobi"`` uses cyclic Jacobi rotations; ``"lapack"`` calls
    ``scipy.linalg.eigh`` and is what the hot paths use.  Eigenvectors are
    normalised so their first non-negligible component is positive.
    """
    M = check_symmetric(M)
    n = M.shape[0]
    k = n if k is None else int(k)
    if not 1 <= k <= max(n, 1) or n == 0:
        raise ValueError(f"k must lie in [1, {n}]")
    if method == "jacobi":
        w, V = jacobi_eigh(0.5 * (M + M.T))
        w, V = w[:k], V[:, :k]
    elif method == "lapack":
        w, V = sla.eigh(0.5 * (M + M.T), subset_by_index=(0, k - 1), driver="evr")
    else:
        raise ValueError(f"unknown method {method!r}")
    return w, _fix_signs(V)


# ---------------------------------------------------------------------------
# Householder frames


@dataclass(frozen=True, eq=False)
class HouseholderFrame:
    """Reflectors ``H_i = I - 2 h_i h_i^T`` (unit ``h_i``) with
    ``H_1 H_2 ... H_q = [Q, U]``.  ``vectors`` has shape ``(q, s)``."""

    patch_dim: int
    rank: int
    vectors: np.ndarray

    @property
    def complement_dim(self) -> int:
        return self.patch_dim - self.rank

    def _forward(self, X):
        # X <- H_q ... H_1 X
        for h in self.vectors:
            X = X - 2.0 * np.outer(h, h @ X) if X.ndim == 2 else X - 2.0 * h * (h @ X)
        return X

    def _backward(self, X):
        # X <- H_1 ... H_q X
        for h in self.vectors[::-1]:
            X = X - 2.0 * np.outer(h, h @ X) if X.ndim == 2 else X - 2.0 * h * (h @ X)
        return X

    def apply_ut(self, x):
        return self._forward(np.asarray(x, dtype=float))[self.rank:]

    def apply_u(self, y):
        y = np.asarray(y, dtype=float)
        z = np.zeros((self.patch_dim,) + y.shape[1:])
        z[self.rank:] = y
        return self._backward(z)

    def apply_qt(self, x):
        return self._forward(np.asarray(x, dtype=float))[: self.rank]

    def apply_q(self, y):
        y = np.asarray(y, dtype=float)
        z = np.zeros((self.patch_dim,) + y.shape[1:])
        z[: self.rank] = y
        return self._backward(z)

    def dense_u(self) -> np.ndarray:
        return self.apply_u(np.eye(self.complement_dim))

    def dense_q(self) -> np.ndarray:
        return self.apply_q(np.eye(self.rank))


def householder_extend(Phi, tol: float = 1e-10) -> HouseholderFrame:
    """Householder QR of an orthonormal ``s x q`` block, giving a frame whose
    trailing ``s - q`` columns span the orthogonal complement of ``Phi``."""
    X = np.array(Phi, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    s, q = X.shape
    if q > s:
        raise ValueError("block has more columns than rows")
    if q and np.max(np.abs(X.T @ X - np.eye(q))) > tol:
        raise ValueError("columns of Phi are not orthonormal")
    vecs = np.zeros((q, s))
    for i in range(q):
        x = X[i:, i]
        nx = np.linalg.norm(x)
        if nx <= tol:
            raise ValueError("rank-deficient input block")
        # sign chosen so that v[0] = x0 + sign(x0)*|x| never cancels
        sgn = 1.0 if x[0] >= 0 else -1.0
        v = x.copy()
        v[0] += sgn * nx
        v /= np.linalg.norm(v)
        X[i:, i:] -= 2.0 * np.outer(v, v @ X[i:, i:])
        vecs[i, i:] = v
    return HouseholderFrame(s, q, vecs)


def apply_complement(frame: HouseholderFrame, mode: str, vec) -> np.ndarray:
    """``mode="Ut"`` computes ``U^T x``; ``mode="U"`` computes ``U y``."""
    vec = np.asarray(vec, dtype=float)
    if mode == "Ut":
        if vec.shape[0] != frame.patch_dim:
            raise ValueError(f"expected length {frame.patch_dim}, got {vec.shape[0]}")
        return frame.apply_ut(vec)
    if mode == "U":
        if vec.shape[0] != frame.complement_dim:
            raise ValueError(f"expected length {frame.complement_dim}, got {vec.shape[0]}")
        return frame.apply_u(vec)
    raise ValueError(f"mode must be 'Ut' or 'U', got {mode!r}")


# ---------------------------------------------------------------------------
# conjugate gradients


@dataclass(frozen=True)
class DiagonalPreconditioner:
    inv_diag: np.ndarray

    def __post_init__(self):
        if np.any(~(self.inv_diag > 0)):
            raise ValueError("preconditioner entries must be strictly positive")

    @classmethod
    def from_diagonal(cls, d) -> "DiagonalPreconditioner":
        d = np.asarray(d, dtype=float)
        if np.any(~(d > 0)):
            raise ValueError("diagonal must be strictly positive for Jacobi preconditioning")
        return cls(1.0 / d)

    @classmethod
    def from_matrix(cls, A) -> "DiagonalPreconditioner":
        if isinstance(A, SparseSymMatrix):
            return cls.from_diagonal(A.diagonal())
        if sp.issparse(A):
            return cls.from_diagonal(A.diagonal())
        return cls.from_diagonal(np.diag(np.asarray(A)))

    def __call__(self, r):
        return self.inv_diag * r


@dataclass
class PCGResult:
    x: np.ndarray
    iterations: int
    residual: float
    converged: bool


def pcg_solve(op, b, M: DiagonalPreconditioner | None = None, rel_tol: float = 1e-8,
              max_iter: int | None = None, x0=None, norm: str = "residual",
              delay: int = 5) -> PCGResult:
    """Preconditioned conjugate gradients.

    Stops when ``||b - op(x)||_2 <= rel_tol ||b||_2`` (``norm="residual"``) or
    when the same holds for the preconditioned residual ``M^{-1} r``
    (``norm="preconditioned"``).  ``norm="energy"`` stops once the delayed
    Hestenes-Stiefel estimate of the energy-norm error ``||x - x*||_op``,
    summed over ``delay`` steps, drops below ``rel_tol ||b||_2``; the
    estimate is a lower bound that tightens as ``delay`` grows.
    ``residual`` in the result is the achieved relative value of the
    selected measure.
    """
    apply = as_operator(op)
    b = np.asarray(b, dtype=float)
    n = b.shape[0]
    if rel_tol <= 0:
        raise ValueError("rel_tol must be positive")
    max_iter = 10 * n + 10 if max_iter is None else int(max_iter)
    prec = M if M is not None else (lambda r: r)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    r = b - apply(x) if x0 is not None else b.copy()
    z = prec(r)

    if norm == "residual":
        ref = np.linalg.norm(b)
        measure = lambda r_, z_: np.linalg.norm(r_)
    elif norm == "preconditioned":
        ref = np.linalg.norm(prec(b))
        measure = lambda r_, z_: np.linalg.norm(z_)
    elif norm == "energy":
        if delay < 1:
            raise ValueError("delay must be at least 1")
        ref = np.linalg.norm(b)
        measure = lambda r_, z_: np.inf
    else:
        raise ValueError(f"unknown norm {norm!r}")
    if ref == 0.0:
        return PCGResult(np.zeros(n), 0, 0.0, True)

    res = measure(r, z) / ref
    if res <= rel_tol:
        return PCGResult(x, 0, res, True)
    p = z.copy()
    rz = r @ z
    best_x, best_res = x.copy(), res
    terms = []
    for it in range(1, max_iter + 1):
        Ap = apply(p)
        pAp = p @ Ap
        if not pAp > 0:
            raise IndefiniteOperatorError(
                f"non-positive curvature p^T A p = {pAp:.3e} at iteration {it}")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        z = prec(r)
        res = measure(r, z) / ref
        if norm == "energy":
            terms.append(alpha * rz)
            if len(terms) >= delay:
                res = np.sqrt(sum(terms[-delay:])) / ref
            if not np.any(r):
                res = 0.0
        if res < best_res:
            best_x, best_res = x.copy(), res
        if res <= rel_tol:
            return PCGResult(x, it, res, True)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    if norm == "energy":
        # energy-norm error is monotone along CG iterates
        return PCGResult(x, max_iter, res, False)
    return PCGResult(best_x, max_iter, best_res, False)


# ---------------------------------------------------------------------------
# dense oracles and spectral estimates


def dense_inverse_oracle(M) -> np.ndarray:
    M = check_symmetric(M)
    try:
        c = sla.cho_factor(M, lower=True)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("matrix is not positive definite") from exc
    inv = sla.cho_solve(c, np.eye(M.shape[0]))
    return 0.5 * (inv + inv.T)


def spectral_norm(op, dim: int, tol: float = 1e-6, max_iter: int = 20000, seed: int = 0) -> float:
    """Largest eigenvalue magnitude of a symmetric operator by power iteration."""
    apply = as_operator(op)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = apply(v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        new = nw
        v = w / nw
        if abs(new - lam) <= tol * new:
            return float(new)
        lam = new
    raise ConvergenceError("power iteration did not converge")


def sym_extremes(A, dense_limit: int = 4000) -> tuple[float, float]:
    """Smallest and largest eigenvalue of a symmetric matrix (dense or sparse)."""
    if isinstance(A, SparseSymMatrix):
        A = A.to_scipy()
    n = A.shape[0]
    if n == 0:
        return float("nan"), float("nan")
    if n <= dense_limit:
        D = A.toarray() if sp.issparse(A) else np.asarray(A)
        w = sla.eigvalsh(0.5 * (D + D.T))
        return float(w[0]), float(w[-1])
    from scipy.sparse.linalg import eigsh

    hi = eigsh(A, k=1, which="LA", return_eigenvectors=False, tol=1e-8)[0]
    lo = eigsh(A, k=1, sigma=0, which="LM", return_eigenvectors=False, tol=1e-8)[0]
    return float(lo), float(hi)


def cholesky_solver(M):
    """Return a callable solving ``M x = b`` with a dense Cholesky factor."""
    M = check_square(M)
    c = sla.cho_factor(0.5 * (M + M.T), lower=True)
    return lambda b: sla.cho_solve(c, b)
