"""Layer-by-layer localization of the energy-minimizing coarse basis."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from .coarse import CoarseSpace, CompressedOperator
from .energy import EnergyDecomposition, Partition
from .linalg import DiagonalPreconditioner, SparseSymMatrix, pcg_solve

TRUNCATE_RTOL = 1e-14


def patch_adjacency(dec: EnergyDecomposition, partition: Partition) -> sp.csr_matrix:
    """Boolean ``M x M`` matrix of patches sharing an energy element."""
    act = dec.slot_active
    elem = dec.slot_elem[act]
    pat = partition.patch_of[dec.slot_vertex[act]]
    M = len(partition)
    inc = sp.csr_matrix((np.ones(elem.size), (elem, pat)), shape=(dec.m, M))
    adj = (inc.T @ inc).tocsr()
    adj.data[:] = 1.0
    return adj


class PatchLayerIndex:
    """Incrementally grown neighbor-patch balls around one center patch."""

    def __init__(self, adjacency: sp.csr_matrix, center: int):
        self.adj = adjacency
        self.M = adjacency.shape[0]
        if not 0 <= center < self.M:
            raise IndexError(f"patch {center} out of range")
        self.center = center
        self._mask = np.zeros(self.M, dtype=bool)
        self._mask[center] = True
        self.layers = [np.array([center], dtype=np.int64)]

    def layer(self, k: int) -> np.ndarray:
        while len(self.layers) <= k:
            cur = self.layers[-1]
            lo, hi = self.adj.indptr[cur], self.adj.indptr[cur + 1]
            idx = np.concatenate([self.adj.indices[a:b] for a, b in zip(lo, hi)])
            new = np.unique(idx[~self._mask[idx]])
            if new.size == 0:
                self.layers.append(cur)
                continue
            self._mask[new] = True
            self.layers.append(np.union1d(cur, new))
        return self.layers[k]

    def saturated(self, k: int) -> bool:
        """True when layer ``k`` can no longer grow."""
        return self.layer(k + 1).size == self.layer(k).size


def patch_layers(partition: Partition, dec: EnergyDecomposition, j: int, k: int,
                 adjacency=None) -> np.ndarray:
    adj = patch_adjacency(dec, partition) if adjacency is None else adjacency
    return PatchLayerIndex(adj, j).layer(k)


@dataclass
class LocalizedColumn:
    index: int
    support: np.ndarray
    values: np.ndarray
    radius: int
    increments: list = field(default_factory=list)
    energies: list = field(default_factory=list)
    eta: float = float("nan")
    hit_cap: bool = False
    history: list | None = field(default=None, repr=False)

    def dense(self, n: int) -> np.ndarray:
        out = np.zeros(n)
        out[self.support] = self.values
        return out


class Localizer:
    """Shared per-level data for building localized columns."""

    def __init__(self, A: SparseSymMatrix, dec: EnergyDecomposition, coarse: CoarseSpace,
                 adjacency=None):
        self.A = A
        self.csr = A.to_scipy()
        self.coarse = coarse
        self.comp = coarse.complement
        self.bdiag = coarse.complement_diagonal(A)
        self.adj = patch_adjacency(dec, coarse.partition) if adjacency is None else adjacency

    def _initial(self, i: int):
        cs = self.coarse
        j = int(cs.coarse_patch[i])
        psi = np.zeros(cs.n)
        P = cs.partition.patches[j]
        psi[P] = cs.phi_blocks[j][:, i - cs.phi_offsets[j]]
        return j, psi

    def _step(self, ids, psi, rtol, inner):
        cs = self.coarse
        sub = self.comp.restrict(ids)
        S = sub.verts
        A_S = self.csr[S][:, S]
        x = psi[S]
        g = sub.ut(A_S @ x)
        if g.size == 0 or not np.any(g):
            return S, np.zeros(S.size), A_S
        if inner == "direct":
            Y = sub.u(np.eye(g.size))
            Mloc = Y.T @ (A_S @ Y)
            z = sla.cho_solve(sla.cho_factor(0.5 * (Mloc + Mloc.T)), g)
        else:
            cols = np.concatenate([np.arange(cs.u_offsets[p], cs.u_offsets[p + 1]) for p in ids])
            pre = DiagonalPreconditioner.from_diagonal(self.bdiag[cols])
            res = pcg_solve(lambda v: sub.ut(A_S @ sub.u(v)), g, pre, rel_tol=rtol,
                            max_iter=10 * g.size + 100)
            z = res.x
        return S, sub.u(z), A_S

    def column(self, i: int, eps_loc: float, inner_rtol: float | None = None, inner: str = "pcg",
               max_radius: int | None = None, keep_history: bool = False) -> LocalizedColumn:
        if not eps_loc >= 0:
            raise ValueError("eps_loc must be non-negative")
        rtol = inner_rtol if inner_rtol is not None else max(eps_loc / 10.0, 1e-14)
        j, psi = self._initial(i)
        layers = PatchLayerIndex(self.adj, j)
        P0 = self.coarse.partition.patches[j]
        energies = [float(psi[P0] @ (self.csr[P0][:, P0] @ psi[P0]))]
        incs, history = [], [] if keep_history else None
        eta, fired, k = float("nan"), False, 0
        while True:
            ids = layers.layer(k)
            S, w, A_S = self._step(ids, psi, rtol, inner)
            psi[S] -= w
            incs.append(float(np.sqrt(max(w @ (A_S @ w), 0.0))))
            x = psi[S]
            energies.append(float(x @ (A_S @ x)))
            if keep_history:
                history.append(psi.copy())
            if k >= 1:
                d, prev = incs[-1], incs[-2]
                if d == 0.0:
                    eta, fired = 0.0, True
                else:
                    eta = float("inf") if prev == 0.0 else d / prev
                    fired = eta < 1 and eta * eta / (1 - eta * eta) * d * d < eps_loc * eps_loc
            if fired or layers.saturated(k) or (max_radius is not None and k >= max_radius):
                break
            k += 1
        nz = np.flatnonzero(psi)
        vals = psi[nz]
        if vals.size:
            keep = np.abs(vals) >= TRUNCATE_RTOL * np.abs(vals).max()
            nz, vals = nz[keep], vals[keep]
        return LocalizedColumn(i, nz, vals, k, incs, energies, eta, not fired, history)


@dataclass
class LocalizedBasis:
    Psi: sp.csc_matrix
    columns: list
    eps_loc: float

    @property
    def radii(self) -> np.ndarray:
        return np.array([c.radius for c in self.columns])

    @property
    def flagged(self) -> int:
        return int(sum(c.hit_cap for c in self.columns))

    def compressed(self, A: SparseSymMatrix) -> CompressedOperator:
        A_st = (self.Psi.T @ A.to_scipy() @ self.Psi).tocsr()
        A_st = 0.5 * (A_st + A_st.T)
        return CompressedOperator(self.Psi, A_st, "localized", self.eps_loc)

    def radii_table(self):
        return [(c.index, c.radius, int(c.support.size), c.eta) for c in self.columns]


def construct_tilde_psi(A: SparseSymMatrix, dec: EnergyDecomposition, coarse: CoarseSpace,
                        eps_loc: float, inner_rtol: float | None = None, threads: int = 1,
                        localizer: Localizer | None = None) -> LocalizedBasis:
    """Localize every coarse column until the increment-ratio stopping rule fires."""
    if not eps_loc > 0:
        raise ValueError("eps_loc must be positive")
    loc = localizer or Localizer(A, dec, coarse)

    def work(i):
        return loc.column(i, eps_loc, inner_rtol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            cols = list(ex.map(work, range(coarse.N)))
    else:
        cols = [work(i) for i in range(coarse.N)]
    lens = [c.support.size for c in cols]
    Psi = sp.csc_matrix((np.concatenate([c.values for c in cols]),
                         np.concatenate([c.support for c in cols]),
                         np.concatenate([[0], np.cumsum(lens)])), shape=(coarse.n, coarse.N))
    return LocalizedBasis(Psi, cols, eps_loc)


def exact_column(A: SparseSymMatrix, coarse: CoarseSpace, i: int) -> np.ndarray:
    """Dense exact basis column by a dense solve (desk scale)."""
    Ad = A.to_dense()
    Phi = coarse.phi_matrix().toarray()
    c = sla.cho_factor(Ad)
    X = sla.cho_solve(c, Phi)
    G = Phi.T @ X
    return X @ np.linalg.solve(0.5 * (G + G.T), np.eye(coarse.N)[:, i])


@dataclass
class DecayRow:
    k: int
    error2: float
    bound: float
    tail2: float
    energy2: float
    increment2: float


def decay_certificate(A: SparseSymMatrix, dec: EnergyDecomposition, coarse: CoarseSpace, i: int,
                      k_max: int, alpha: float, delta_patch: float,
                      psi_exact: np.ndarray | None = None) -> list[DecayRow]:
    """Measured ``||psi^k - psi||_A^2`` against ``((alpha-1)/alpha)^k * delta`` for
    ``k = 0..k_max``, using exact inner solves.

    ``tail2`` is the interior energy of the exact column on the vertices outside
    the k-th layer.
    """
    psi = exact_column(A, coarse, i) if psi_exact is None else np.asarray(psi_exact, dtype=float)
    loc = Localizer(A, dec, coarse)
    col = loc.column(i, 0.0, inner="direct", max_radius=k_max, keep_history=True)
    rate = (alpha - 1.0) / alpha if np.isfinite(alpha) else 1.0
    layers = PatchLayerIndex(loc.adj, int(coarse.coarse_patch[i]))
    csr = loc.csr
    rows = []
    for k, pk in enumerate(col.history):
        e = pk - psi
        inside = np.zeros(coarse.n, dtype=bool)
        for p in layers.layer(k):
            inside[coarse.partition.patches[p]] = True
        out = np.flatnonzero(~inside)
        tail = 0.0
        if out.size:
            Ic = dec.local_blocks(out)[0]
            tail = float(psi[out] @ Ic @ psi[out])
        rows.append(DecayRow(k, float(e @ (csr @ e)), rate**k * delta_patch, tail,
                             col.energies[k + 1], col.increments[k] ** 2))
    return rows
