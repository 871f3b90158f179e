"""Energy decompositions ``A = sum_k E_k`` and the local energies derived from them."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from ._validation import check_index_set, check_symmetric
from .linalg import SparseSymMatrix

# E ~ v is decided by v^T E v > NEIGHBOR_RTOL * trace(E)
NEIGHBOR_RTOL = 1e-14


def _ranges(starts: np.ndarray, lengths: np.ndarray) -> np.ndarray:
    """Concatenate ``arange(s, s + l)`` for each (s, l) pair."""
    lengths = np.asarray(lengths, dtype=np.int64)
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    offs = np.repeat(np.asarray(starts, dtype=np.int64) - np.cumsum(lengths) + lengths, lengths)
    return offs + np.arange(total, dtype=np.int64)


@dataclass(frozen=True)
class EnergyElement:
    support: np.ndarray
    local_matrix: np.ndarray

    def __post_init__(self):
        if self.local_matrix.shape != (self.support.size, self.support.size):
            raise ValueError("local matrix does not match support size")


class EnergyDecomposition:
    """A list of symmetric positive semidefinite elements on ``n`` unknowns.

    Storage is flat: element ``e`` owns vertex slots ``slot_ptr[e]:slot_ptr[e+1]``
    of ``slot_vertex`` and the row-major block ``val_ptr[e]:val_ptr[e+1]`` of
    ``values``.  Supports are sorted on ingestion.
    """

    def __init__(self, n: int, slot_ptr, slot_vertex, values, validate_psd: bool = False):
        self.n = int(n)
        slot_ptr = np.asarray(slot_ptr, dtype=np.int64)
        slot_vertex = np.asarray(slot_vertex, dtype=np.int64)
        values = np.asarray(values, dtype=float)
        sizes = np.diff(slot_ptr)
        if slot_ptr[0] != 0 or np.any(sizes < 1) or slot_ptr[-1] != slot_vertex.size:
            raise ValueError("malformed element pointer array")
        if slot_vertex.size and (slot_vertex.min() < 0 or slot_vertex.max() >= self.n):
            raise IndexError("element support outside [0, n)")
        val_ptr = np.concatenate([[0], np.cumsum(sizes * sizes)])
        if val_ptr[-1] != values.size:
            raise ValueError("value array does not match element sizes")

        slot_ptr, slot_vertex, values, val_ptr = _sort_supports(slot_ptr, slot_vertex, values, val_ptr)
        self.slot_ptr = slot_ptr
        self.slot_vertex = slot_vertex
        self.values = values
        self.val_ptr = val_ptr
        self.sizes = sizes
        self.m = sizes.size
        self.slot_elem = np.repeat(np.arange(self.m), sizes)

        # entry -> (row slot, col slot)
        local = np.arange(slot_vertex.size) - slot_ptr[self.slot_elem]
        ent_elem = np.repeat(np.arange(self.m), sizes * sizes)
        ent_local = np.arange(values.size) - val_ptr[ent_elem]
        s_of = sizes[ent_elem]
        self.entry_rslot = slot_ptr[ent_elem] + ent_local // s_of
        self.entry_cslot = slot_ptr[ent_elem] + ent_local % s_of
        self.entry_row = slot_vertex[self.entry_rslot]
        self.entry_col = slot_vertex[self.entry_cslot]
        diag_entry = self.entry_rslot == self.entry_cslot
        slot_diag = np.zeros(slot_vertex.size)
        slot_diag[self.entry_rslot[diag_entry]] = values[diag_entry]
        if np.any(np.abs(values - values[self._transpose_index(sizes, val_ptr, ent_elem, ent_local, s_of)])
                  > 1e-12 * np.maximum(1.0, np.abs(values))):
            raise ValueError("element matrix is not symmetric")
        trace = np.bincount(self.slot_elem, weights=slot_diag, minlength=self.m)
        self.trace = trace
        self.slot_active = slot_diag > NEIGHBOR_RTOL * trace[self.slot_elem]
        # diagonal concentration: row-wise absolute sums
        self.slot_dconc = np.bincount(self.entry_rslot, weights=np.abs(values), minlength=slot_vertex.size)
        self.vertex_dconc = np.bincount(slot_vertex, weights=self.slot_dconc, minlength=self.n)
        self._local = local

        act = np.flatnonzero(self.slot_active)
        order = np.argsort(slot_vertex[act], kind="stable")
        self.vertex_ptr = np.concatenate([[0], np.cumsum(np.bincount(slot_vertex[act], minlength=self.n))])
        self.vertex_elems = self.slot_elem[act][order]
        self.vertex_slots = act[order]

        if validate_psd:
            self.check_psd()

    @staticmethod
    def _transpose_index(sizes, val_ptr, ent_elem, ent_local, s_of):
        r = ent_local // s_of
        c = ent_local % s_of
        return val_ptr[ent_elem] + c * s_of + r

    # -- constructors -----------------------------------------------------

    @classmethod
    def from_elements(cls, n: int, elements: Iterable, validate_psd: bool = False) -> "EnergyDecomposition":
        supports, mats = [], []
        for el in elements:
            if isinstance(el, EnergyElement):
                sup, mat = el.support, el.local_matrix
            else:
                sup, mat = el
            sup = np.atleast_1d(np.asarray(sup, dtype=np.int64))
            mat = np.atleast_2d(np.asarray(mat, dtype=float))
            if mat.shape != (sup.size, sup.size):
                raise ValueError("element matrix does not match its support")
            if np.unique(sup).size != sup.size:
                raise ValueError("element support has duplicate vertices")
            supports.append(sup)
            mats.append(mat.ravel())
        if not supports:
            raise ValueError("empty decomposition")
        sizes = np.array([s.size for s in supports])
        return cls(n, np.concatenate([[0], np.cumsum(sizes)]), np.concatenate(supports),
                   np.concatenate(mats), validate_psd=validate_psd)

    @classmethod
    def from_graph(cls, n: int, edges, weights, loops=None, loop_weights=None) -> "EnergyDecomposition":
        """One element per edge ``w [[1,-1],[-1,1]]`` and one per self-loop ``[w]``.

        Self-loop elements come first, then edges in the given order.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        w = np.asarray(weights, dtype=float).ravel()
        if np.any(edges[:, 0] == edges[:, 1]):
            raise ValueError("edges must join distinct vertices")
        if np.any(w < 0):
            raise ValueError("edge weights must be non-negative")
        loops = np.zeros(0, dtype=np.int64) if loops is None else np.asarray(loops, dtype=np.int64).ravel()
        lw = np.zeros(0) if loop_weights is None else np.asarray(loop_weights, dtype=float).ravel()
        if np.any(lw < 0):
            raise ValueError("self-loop weights must be non-negative")
        sizes = np.concatenate([np.ones(loops.size, dtype=np.int64), np.full(edges.shape[0], 2)])
        ptr = np.concatenate([[0], np.cumsum(sizes)])
        verts = np.concatenate([loops, edges.ravel()])
        vals = np.concatenate([lw, (w[:, None] * np.array([1.0, -1.0, -1.0, 1.0])).ravel()])
        return cls(n, ptr, verts, vals)

    # -- element access ---------------------------------------------------

    def support(self, e: int) -> np.ndarray:
        return self.slot_vertex[self.slot_ptr[e]:self.slot_ptr[e + 1]]

    def local_matrix(self, e: int) -> np.ndarray:
        s = self.sizes[e]
        return self.values[self.val_ptr[e]:self.val_ptr[e + 1]].reshape(s, s)

    def element(self, e: int) -> EnergyElement:
        if not 0 <= e < self.m:
            raise IndexError(f"element id {e} out of range")
        return EnergyElement(self.support(e).copy(), self.local_matrix(e).copy())

    def __iter__(self):
        return (self.element(e) for e in range(self.m))

    def __len__(self):
        return self.m

    def check_psd(self, rtol: float = 1e-10) -> None:
        for e in range(self.m):
            M = self.local_matrix(e)
            lam = np.linalg.eigvalsh(M)[0]
            if lam < -rtol * max(np.linalg.norm(M), 1e-300):
                raise ValueError(f"element {e} is not positive semidefinite (lambda_min={lam:.3e})")

    # -- internal fast paths ---------------------------------------------

    def elements_touching(self, S: np.ndarray) -> np.ndarray:
        """Element ids with an active slot on some vertex of ``S``."""
        idx = _ranges(self.vertex_ptr[S], self.vertex_ptr[S + 1] - self.vertex_ptr[S])
        return np.unique(self.vertex_elems[idx])

    def interior_elements(self, S: np.ndarray, in_s: np.ndarray) -> np.ndarray:
        """Elements whose active vertices all lie in ``S`` (``in_s`` is a mask)."""
        cand = self.elements_touching(S)
        if cand.size == 0:
            return cand
        slots = _ranges(self.slot_ptr[cand], self.sizes[cand])
        ok = in_s[self.slot_vertex[slots]] | ~self.slot_active[slots]
        starts = np.concatenate([[0], np.cumsum(self.sizes[cand])[:-1]])
        return cand[np.logical_and.reduceat(ok, starts)]

    def local_blocks(self, S) -> tuple[np.ndarray, np.ndarray]:
        """Interior energy and interior diagonal concentration on sorted ``S``.

        Returns ``(interior, din)`` where ``din[v]`` is the diagonal
        concentration contributed by interior elements at ``S[v]``.
        """
        S = np.asarray(S, dtype=np.int64)
        s = S.size
        in_s = np.zeros(self.n, dtype=bool)
        in_s[S] = True
        loc = np.full(self.n, -1, dtype=np.int64)
        loc[S] = np.arange(s)
        inner = self.interior_elements(S, in_s)
        if inner.size == 0:
            return np.zeros((s, s)), np.zeros(s)
        ent = _ranges(self.val_ptr[inner], self.sizes[inner] ** 2)
        r = self.entry_row[ent]
        c = self.entry_col[ent]
        keep = in_s[r] & in_s[c]
        flat = loc[r[keep]] * s + loc[c[keep]]
        M = np.bincount(flat, weights=self.values[ent][keep], minlength=s * s).reshape(s, s)
        slots = _ranges(self.slot_ptr[inner], self.sizes[inner])
        sv = self.slot_vertex[slots]
        sk = in_s[sv]
        din = np.bincount(loc[sv[sk]], weights=self.slot_dconc[slots][sk], minlength=s)
        return 0.5 * (M + M.T), din

    def interior_and_closed(self, S) -> tuple[np.ndarray, np.ndarray]:
        S = np.asarray(S, dtype=np.int64)
        interior, din = self.local_blocks(S)
        closed = interior + np.diag(self.vertex_dconc[S] - din)
        return interior, closed

    def offdiagonal_coupling(self) -> sp.csr_matrix:
        """Sparse matrix of ``sum_E |u^T E v|`` over elements where both
        ``u`` and ``v`` are active and distinct."""
        keep = (self.entry_rslot != self.entry_cslot) & self.slot_active[self.entry_rslot] \
            & self.slot_active[self.entry_cslot]
        C = sp.coo_matrix((np.abs(self.values[keep]), (self.entry_row[keep], self.entry_col[keep])),
                          shape=(self.n, self.n)).tocsr()
        C.sum_duplicates()
        C.eliminate_zeros()
        return C


def _sort_supports(slot_ptr, slot_vertex, values, val_ptr):
    sizes = np.diff(slot_ptr)
    elem = np.repeat(np.arange(sizes.size), sizes)
    order = np.lexsort((slot_vertex, elem))
    new_vertex = slot_vertex[order]
    if np.any((np.diff(new_vertex) == 0) & (np.diff(elem) == 0)):
        raise ValueError("element support has duplicate vertices")
    moved = order != np.arange(order.size)
    if not moved.any():
        return slot_ptr, slot_vertex, values, val_ptr
    new_values = values.copy()
    perm_local = order - slot_ptr[elem]
    for e in np.unique(elem[moved]):
        s = sizes[e]
        p = perm_local[slot_ptr[e]:slot_ptr[e + 1]]
        block = values[val_ptr[e]:val_ptr[e + 1]].reshape(s, s)
        new_values[val_ptr[e]:val_ptr[e + 1]] = block[np.ix_(p, p)].ravel()
    return slot_ptr, new_vertex, new_values, val_ptr


# ---------------------------------------------------------------------------
# public operations


def assemble(dec: EnergyDecomposition) -> SparseSymMatrix:
    """Sum of all elements as a sparse symmetric matrix."""
    if dec.m == 0:
        raise ValueError("empty decomposition")
    M = sp.coo_matrix((dec.values, (dec.entry_row, dec.entry_col)), shape=(dec.n, dec.n)).tocsr()
    M.sum_duplicates()
    M = 0.5 * (M + M.T)
    return SparseSymMatrix.from_scipy(M)


def positive_definite_probe(dec: EnergyDecomposition, A: SparseSymMatrix | None = None,
                            tol: float = 1e-12) -> bool:
    """True when some vertex carries a positive self-loop and ``lambda_min(A) > 0``."""
    loops = (dec.sizes == 1) & (dec.trace > 0)
    if not np.any(loops):
        return False
    from .linalg import sym_extremes

    A = assemble(dec) if A is None else A
    lo, hi = sym_extremes(A)
    return bool(lo > tol * max(hi, 1.0))


def element_neighbors(dec: EnergyDecomposition, e: int) -> np.ndarray:
    if not 0 <= e < dec.m:
        raise IndexError(f"element id {e} out of range")
    sl = slice(dec.slot_ptr[e], dec.slot_ptr[e + 1])
    return dec.slot_vertex[sl][dec.slot_active[sl]].copy()


def vertex_elements(dec: EnergyDecomposition, v: int) -> np.ndarray:
    if not 0 <= v < dec.n:
        raise IndexError(f"vertex {v} out of range")
    return dec.vertex_elems[dec.vertex_ptr[v]:dec.vertex_ptr[v + 1]].copy()


def adjacent(dec: EnergyDecomposition, u: int, v: int) -> bool:
    """True when some element couples ``u`` and ``v`` with a nonzero entry."""
    for e in np.intersect1d(vertex_elements(dec, u), vertex_elements(dec, v)):
        sup = dec.support(e)
        i, j = np.searchsorted(sup, u), np.searchsorted(sup, v)
        if dec.local_matrix(e)[i, j] != 0.0:
            return True
    return False


def restricted_energy(A: SparseSymMatrix, S) -> np.ndarray:
    """Principal submatrix of ``A`` on ``S`` (returned in the given order)."""
    S = np.asarray(S, dtype=np.int64).ravel()
    check_index_set(S, A.dim)
    return A.principal_submatrix(S)


def interior_energy(dec: EnergyDecomposition, S) -> np.ndarray:
    """Sum of the elements supported inside ``S``, on sorted ``S``."""
    S = check_index_set(S, dec.n)
    return dec.local_blocks(S)[0]


def closed_energy(dec: EnergyDecomposition, S) -> np.ndarray:
    """Interior energy plus diagonal concentrations of boundary elements, on sorted ``S``."""
    S = check_index_set(S, dec.n)
    return dec.interior_and_closed(S)[1]


def diagonal_concentration(E) -> np.ndarray:
    """Row-wise absolute sums of an element matrix (or ``EnergyElement``)."""
    M = E.local_matrix if isinstance(E, EnergyElement) else np.atleast_2d(np.asarray(E, dtype=float))
    return np.abs(check_symmetric(M)).sum(axis=1)


def merge_identical_supports(dec: EnergyDecomposition) -> EnergyDecomposition:
    """Lossless normalisation: sum elements that share the same support."""
    keys: dict[tuple, int] = {}
    supports: list[np.ndarray] = []
    mats: list[np.ndarray] = []
    for e in range(dec.m):
        sup = dec.support(e)
        key = tuple(sup.tolist())
        if key in keys:
            mats[keys[key]] = mats[keys[key]] + dec.local_matrix(e)
        else:
            keys[key] = len(supports)
            supports.append(sup.copy())
            mats.append(dec.local_matrix(e).copy())
    return EnergyDecomposition.from_elements(dec.n, zip(supports, mats))


class Partition:
    """Disjoint sorted patches covering ``[0, n)``."""

    def __init__(self, patches: Sequence, n: int | None = None):
        self.patches = [np.sort(np.asarray(p, dtype=np.int64).ravel()) for p in patches]
        if any(p.size == 0 for p in self.patches):
            raise ValueError("patches must be nonempty")
        allv = np.concatenate(self.patches) if self.patches else np.zeros(0, dtype=np.int64)
        self.n = int(allv.size) if n is None else int(n)
        if allv.size != self.n or (allv.size and (allv.min() < 0 or allv.max() >= self.n)):
            raise ValueError("patches do not cover [0, n) exactly")
        self.patch_of = np.full(self.n, -1, dtype=np.int64)
        for j, p in enumerate(self.patches):
            if np.any(self.patch_of[p] >= 0):
                raise ValueError("patches are not disjoint")
            self.patch_of[p] = j
        if np.any(self.patch_of < 0):
            raise ValueError("patches do not cover [0, n)")

    @classmethod
    def from_labels(cls, labels) -> "Partition":
        labels = np.asarray(labels, dtype=np.int64)
        uniq, inv = np.unique(labels, return_inverse=True)
        order = np.argsort(inv, kind="stable")
        bounds = np.concatenate([[0], np.cumsum(np.bincount(inv, minlength=uniq.size))])
        return cls([order[bounds[k]:bounds[k + 1]] for k in range(uniq.size)], labels.size)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls([[v] for v in range(n)], n)

    def __len__(self):
        return len(self.patches)

    def __iter__(self):
        return iter(self.patches)

    def sizes(self) -> np.ndarray:
        return np.array([p.size for p in self.patches])
