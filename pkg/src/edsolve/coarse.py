"""Coarse space from patch interior eigenvectors, its orthonormal complement,
the energy-minimizing basis and the compressed stiffness."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .energy import EnergyDecomposition, Partition
from .linalg import (DiagonalPreconditioner, SparseSymMatrix, householder_extend, pcg_solve,
                     spectral_norm, sym_extremes)
from .measurements import DEGENERATE_EIG, local_eigs


class DegeneratePatchError(ValueError):
    pass


class BlockComplement:
    """Matrix-free block-diagonal ``U`` built from per-patch Householder reflectors.

    Vectors live in *patch order*: the concatenation of the patches' vertex
    lists.  Reflectors of all patches are stacked so that one reflector index
    is applied to every patch at once.
    """

    def __init__(self, patches, frames):
        sizes = np.array([p.size for p in patches], dtype=np.int64)
        self.verts = np.concatenate(patches) if patches else np.zeros(0, dtype=np.int64)
        self.sizes = sizes
        self.starts = np.concatenate([[0], np.cumsum(sizes)])
        self.ranks = np.array([f.rank for f in frames], dtype=np.int64)
        qmax = int(self.ranks.max()) if len(frames) else 0
        L = self.verts.size
        self.H = np.zeros((qmax, L))
        for j, f in enumerate(frames):
            a, b = self.starts[j], self.starts[j + 1]
            self.H[: f.rank, a:b] = f.vectors
        pos = np.arange(L) - np.repeat(self.starts[:-1], sizes)
        self.keep = pos >= np.repeat(self.ranks, sizes)
        self._active = [np.any(self.H[r] != 0) for r in range(qmax)]

    @property
    def length(self) -> int:
        return self.verts.size

    @property
    def complement_dim(self) -> int:
        return int(self.keep.sum())

    def _reflect(self, X, order):
        seg = self.starts[:-1]
        for r in order:
            if not self._active[r]:
                continue
            h = self.H[r] if X.ndim == 1 else self.H[r][:, None]
            t = np.add.reduceat(h * X, seg, axis=0)
            X -= 2.0 * h * np.repeat(t, self.sizes, axis=0)
        return X

    def ut(self, x):
        """``U^T x`` for ``x`` in patch order."""
        X = np.array(x, dtype=float)
        return self._reflect(X, range(self.H.shape[0]))[self.keep]

    def u(self, y):
        """``U y``, returned in patch order."""
        y = np.asarray(y, dtype=float)
        X = np.zeros((self.length,) + y.shape[1:])
        X[self.keep] = y
        return self._reflect(X, range(self.H.shape[0] - 1, -1, -1))

    def restrict(self, patch_ids) -> "BlockComplement":
        """The complement restricted to a subset of patches (in the given order)."""
        out = object.__new__(BlockComplement)
        ids = np.asarray(patch_ids, dtype=np.int64)
        idx = _segments(self.starts, ids)
        out.verts = self.verts[idx]
        out.sizes = self.sizes[ids]
        out.starts = np.concatenate([[0], np.cumsum(out.sizes)])
        out.ranks = self.ranks[ids]
        out.H = self.H[:, idx]
        out.keep = self.keep[idx]
        out._active = [np.any(out.H[r] != 0) for r in range(out.H.shape[0])]
        return out


def _segments(starts, ids):
    lens = starts[ids + 1] - starts[ids]
    total = int(lens.sum())
    offs = np.repeat(starts[ids] - np.cumsum(lens) + lens, lens)
    return offs + np.arange(total, dtype=np.int64)


@dataclass(eq=False)
class CoarseSpace:
    partition: Partition
    q: int
    phi_blocks: list
    frames: list
    eps: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        self.ranks = np.array([b.shape[1] for b in self.phi_blocks], dtype=np.int64)
        self.phi_offsets = np.concatenate([[0], np.cumsum(self.ranks)])
        comp = self.partition.sizes() - self.ranks
        self.u_offsets = np.concatenate([[0], np.cumsum(comp)])
        self.coarse_patch = np.repeat(np.arange(len(self.partition)), self.ranks)
        self.complement = BlockComplement(self.partition.patches, self.frames)

    @property
    def n(self) -> int:
        return self.partition.n

    @property
    def N(self) -> int:
        return int(self.phi_offsets[-1])

    def phi_matrix(self) -> sp.csc_matrix:
        rows, cols, vals = [], [], []
        for j, (P, B) in enumerate(zip(self.partition.patches, self.phi_blocks)):
            r, c = np.meshgrid(P, np.arange(B.shape[1]) + self.phi_offsets[j], indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(B.ravel())
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, self.N))

    def u_matrix(self) -> sp.csc_matrix:
        """Explicit ``n x (n - N)`` complement (for inspection and small checks)."""
        blocks = [f.dense_u() for f in self.frames]
        rows, cols, vals = [], [], []
        for j, (P, Uj) in enumerate(zip(self.partition.patches, blocks)):
            if Uj.shape[1] == 0:
                continue
            r, c = np.meshgrid(P, np.arange(Uj.shape[1]) + self.u_offsets[j], indexing="ij")
            rows.append(r.ravel())
            cols.append(c.ravel())
            vals.append(Uj.ravel())
        m = self.n - self.N
        if not rows:
            return sp.csc_matrix((self.n, m))
        return sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.n, m))

    def ut(self, x):
        return self.complement.ut(np.asarray(x, dtype=float)[self.complement.verts])

    def u(self, y):
        out = np.zeros((self.n,) + np.shape(y)[1:])
        out[self.complement.verts] = self.complement.u(y)
        return out

    def complement_diagonal(self, A: SparseSymMatrix) -> np.ndarray:
        """Diagonal of ``U^T A U`` from patch-local dense blocks."""
        csr = A.to_scipy()
        out = np.zeros(self.n - self.N)
        for j, (P, f) in enumerate(zip(self.partition.patches, self.frames)):
            if f.complement_dim == 0:
                continue
            Uj = f.dense_u()
            Ajj = csr[P][:, P].toarray()
            out[self.u_offsets[j]:self.u_offsets[j + 1]] = np.einsum("ic,ij,jc->c", Uj, Ajj, Uj)
        return out


def construct_phi(dec: EnergyDecomposition, partition: Partition, q: int = 1,
                  phi_blocks=None, eps=None) -> CoarseSpace:
    """Per-patch first ``q`` interior eigenvectors plus Householder frames.

    ``phi_blocks`` may be supplied (e.g. cached by the partitioner) to skip
    the eigensolves.
    """
    if q < 1:
        raise ValueError("q must be at least 1")
    if phi_blocks is None:
        phi_blocks, eps = [], []
        for j, P in enumerate(partition.patches):
            if q >= P.size:
                phi_blocks.append(np.eye(P.size))
                eps.append(0.0)
                continue
            interior = dec.local_blocks(P)[0]
            w, V = local_eigs(interior, q)
            if w[q] <= DEGENERATE_EIG:
                raise DegeneratePatchError(
                    f"patch {j} has at least {q + 1} (near-)zero interior eigenvalues")
            phi_blocks.append(V[:, :q])
            eps.append(1.0 / np.sqrt(w[q]))
    elif len(phi_blocks) != len(partition):
        raise ValueError("one Phi block per patch is required")
    frames = [householder_extend(B) for B in phi_blocks]
    eps = None if eps is None else np.asarray(eps, dtype=float)
    return CoarseSpace(partition, q, [np.asarray(B, dtype=float) for B in phi_blocks], frames, eps)


@dataclass(eq=False)
class CompressedOperator:
    Psi: object
    A_st: object
    provenance: str = "exact"
    eps_loc: float | None = None

    @property
    def N(self) -> int:
        return self.Psi.shape[1]

    def stiffness_dense(self) -> np.ndarray:
        M = self.A_st.toarray() if sp.issparse(self.A_st) else np.asarray(self.A_st)
        return 0.5 * (M + M.T)


def _factor(A: SparseSymMatrix):
    return spla.splu(A.to_scipy().tocsc())


def exact_psi(A: SparseSymMatrix, coarse: CoarseSpace) -> CompressedOperator:
    """``Psi = A^{-1} Phi (Phi^T A^{-1} Phi)^{-1}`` by sparse direct solves."""
    lu = _factor(A)
    Phi = coarse.phi_matrix().toarray()
    X = lu.solve(Phi)
    G = Phi.T @ X
    G = 0.5 * (G + G.T)
    A_st = np.linalg.inv(G)
    A_st = 0.5 * (A_st + A_st.T)
    return CompressedOperator(X @ A_st, A_st, "exact")


def compress_apply(comp: CompressedOperator, b, rel_tol: float = 1e-12) -> np.ndarray:
    """``Psi A_st^{-1} Psi^T b``."""
    b = np.asarray(b, dtype=float)
    y = comp.Psi.T @ b
    if comp.N <= 4000:
        c = sla.cho_factor(comp.stiffness_dense(), lower=True)
        z = sla.cho_solve(c, y)
    else:
        S = SparseSymMatrix.from_scipy(sp.csr_matrix(comp.A_st), check=False)
        z = pcg_solve(S, y, DiagonalPreconditioner.from_matrix(S), rel_tol=rel_tol).x
    return np.asarray(comp.Psi @ z).ravel()


def compression_error(A: SparseSymMatrix, comp: CompressedOperator, method: str = "dense",
                      tol: float = 1e-8, seed: int = 0) -> float:
    """``||A^{-1} - Psi A_st^{-1} Psi^T||_2``.

    ``method="dense"`` forms both operators and takes extreme eigenvalues;
    ``method="power"`` runs power iteration on the residual operator.
    """
    if method == "dense":
        Ainv = np.linalg.inv(A.to_dense())
        Psi = comp.Psi.toarray() if sp.issparse(comp.Psi) else np.asarray(comp.Psi)
        K = Psi @ sla.solve(comp.stiffness_dense(), Psi.T, assume_a="pos")
        R = Ainv - K
        w = np.linalg.eigvalsh(0.5 * (R + R.T))
        return float(max(abs(w[0]), abs(w[-1])))
    if method == "power":
        lu = _factor(A)
        c = sla.cho_factor(comp.stiffness_dense(), lower=True)

        def op(v):
            return lu.solve(v) - np.asarray(comp.Psi @ sla.cho_solve(c, comp.Psi.T @ v)).ravel()

        return spectral_norm(op, A.dim, tol=tol, seed=seed)
    raise ValueError(f"unknown method {method!r}")


def stiffness_condition_report(A: SparseSymMatrix, comp: CompressedOperator, delta: float,
                               eps: float | None = None, slack: float = 1e-6) -> dict:
    """Measured extremes of ``A_st`` against the condition-number bound.

    For a localized basis pass ``eps`` (the per-column localization budget
    times ``sqrt(N)``) to use the inflated bound.
    """
    lam_min_A, lam_max_A = sym_extremes(A)
    Ast = comp.stiffness_dense()
    w = np.linalg.eigvalsh(Ast)
    lo, hi = float(w[0]), float(w[-1])
    inflate = 1.0 if not eps else (1.0 + eps / np.sqrt(delta)) ** 2
    bound = inflate * delta / lam_min_A
    return {
        "lambda_min": lo,
        "lambda_max": hi,
        "kappa": hi / lo,
        "bound": bound,
        "lambda_min_A": lam_min_A,
        "lambda_max_A": lam_max_A,
        "violates_lambda_min": lo < lam_min_A * (1 - slack),
        "violates_lambda_max": hi > inflate * delta * (1 + slack),
        "violates_kappa": hi / lo > bound * (1 + slack),
    }


def complement_stiffness(A: SparseSymMatrix, coarse: CoarseSpace) -> sp.csr_matrix:
    """Explicit ``U^T A U``."""
    U = coarse.u_matrix()
    B = (U.T @ A.to_scipy() @ U).tocsr()
    return 0.5 * (B + B.T)
