"""Bottom-up pair clustering of vertices into patches with a prescribed
error factor and bounded ``delta * eps**2``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from ._validation import check_index_set, check_positive
from .energy import EnergyDecomposition, Partition
from .measurements import patch_core


def connection(dec: EnergyDecomposition, Pa, Pb) -> float:
    """Sum of ``|u^T E v|`` over elements touching both patches, ``u`` in
    ``Pa`` and ``v`` in ``Pb``."""
    Pa = check_index_set(Pa, dec.n, "Pa")
    Pb = check_index_set(Pb, dec.n, "Pb")
    if np.intersect1d(Pa, Pb).size:
        raise ValueError("patches must be disjoint")
    C = dec.offdiagonal_coupling()
    return float(C[Pa][:, Pb].sum())


@dataclass
class ClusterState:
    """Mutable state of the pair-clustering sweep.

    Patch ids are the id of the initiating vertex; a merged patch keeps the id
    of the patch that ran the match.
    """

    dec: EnergyDecomposition
    q: int
    members: dict = field(default_factory=dict)
    active: dict = field(default_factory=dict)
    delta: dict = field(default_factory=dict)
    eps: dict = field(default_factory=dict)
    phi: dict = field(default_factory=dict)
    con: dict = field(default_factory=dict)
    operated: set = field(default_factory=set)

    @classmethod
    def singletons(cls, dec: EnergyDecomposition, q: int = 1) -> "ClusterState":
        st = cls(dec, q)
        C = dec.offdiagonal_coupling()
        for v in range(dec.n):
            st.members[v] = np.array([v], dtype=np.int64)
            st.active[v] = True
            # closed energy of a single vertex is its total diagonal concentration
            st.delta[v] = float(dec.vertex_dconc[v])
            st.eps[v] = 0.0
            st.phi[v] = np.ones((1, 1))
            lo, hi = C.indptr[v], C.indptr[v + 1]
            st.con[v] = dict(zip(C.indices[lo:hi].tolist(), C.data[lo:hi].tolist()))
        return st

    def neighbors(self, p: int):
        return self.con[p].keys()

    def evaluate_union(self, a: int, b: int):
        union = np.union1d(self.members[a], self.members[b])
        interior, closed = self.dec.interior_and_closed(union)
        _, eps, phi, delta = patch_core(interior, closed, self.q)
        return union, eps, phi, delta

    def combine(self, a: int, b: int, union, eps, phi, delta) -> None:
        self.members[a] = union
        self.eps[a], self.phi[a], self.delta[a] = eps, phi, delta
        for k, w in self.con.pop(b).items():
            if k == a:
                continue
            self.con[a][k] = self.con[a].get(k, 0.0) + w
            ck = self.con[k]
            ck[a] = ck.get(a, 0.0) + w
            del ck[b]
        self.con[a].pop(b, None)
        for d in (self.members, self.active, self.delta, self.eps, self.phi):
            del d[b]


def find_match(state: ClusterState, p: int, eps: float, c: float) -> bool:
    """Try to absorb the best-connected unoperated active neighbor of ``p``."""
    best, best_w = None, -1.0
    for k, w in state.con[p].items():
        if k in state.operated or not state.active[k]:
            continue
        if w > best_w or (w == best_w and k < best):
            best, best_w = k, w
    if best is None or best_w <= 0.0:
        return False
    union, e, phi, d = state.evaluate_union(p, best)
    if e <= eps and d * e * e <= c:
        state.combine(p, best, union, e, phi, d)
        return True
    return False


@dataclass
class ClusterResult:
    partition: Partition
    phi_blocks: list
    eps: np.ndarray
    delta: np.ndarray
    sweeps: int
    merges: int
    frozen_mergeable: int | None = None

    @property
    def error_factor(self) -> float:
        return float(self.eps.max()) if self.eps.size else 0.0

    @property
    def condition_factor(self) -> float:
        return float(self.delta.max()) if self.delta.size else 0.0


def _sort_key(state: ClusterState, size_weighted: bool):
    if size_weighted:
        return lambda p: (-state.delta[p] / state.members[p].size, -state.members[p].size, p)
    return lambda p: (-state.delta[p], -state.members[p].size, p)


def pair_cluster(dec: EnergyDecomposition, eps: float, c: float, q: int = 1,
                 size_weighted: bool = False, check_frozen: bool = False) -> ClusterResult:
    """Greedy pairwise agglomeration starting from singletons.

    Every returned patch satisfies ``eps_j <= eps`` and ``delta_j * eps_j**2 <= c``.
    With ``check_frozen`` the result counts frozen patches that could still be
    merged with some neighbor (a diagnostic only; frozen patches never merge).
    """
    check_positive(eps, "eps")
    if not c >= 1:
        raise ValueError(f"c must be at least 1, got {c}")
    if q < 1:
        raise ValueError("q must be at least 1")
    state = ClusterState.singletons(dec, q)
    key = _sort_key(state, size_weighted)
    sweeps = merges = 0
    while True:
        live = sorted((p for p, a in state.active.items() if a), key=key)
        if not live:
            break
        sweeps += 1
        state.operated = set()
        for p in live:
            if p not in state.members or not state.active[p]:
                continue
            if find_match(state, p, eps, c):
                state.operated.add(p)
                merges += 1
            elif not any(k in state.operated for k in state.con[p]):
                state.active[p] = False

    frozen_ok = _count_frozen_mergeable(state, eps, c) if check_frozen else None
    ids = sorted(state.members, key=lambda p: state.members[p][0])
    return ClusterResult(
        partition=Partition([state.members[p] for p in ids], dec.n),
        phi_blocks=[state.phi[p] for p in ids],
        eps=np.array([state.eps[p] for p in ids]),
        delta=np.array([state.delta[p] for p in ids]),
        sweeps=sweeps,
        merges=merges,
        frozen_mergeable=frozen_ok,
    )


def _count_frozen_mergeable(state: ClusterState, eps: float, c: float) -> int:
    count = 0
    for p in state.members:
        for k in state.con[p]:
            _, e, _, d = state.evaluate_union(p, k)
            if e <= eps and d * e * e <= c:
                count += 1
                break
    return count


def regular_partition(coords, cells_per_axis: int) -> Partition:
    """Bin points into an axis-aligned grid of equal boxes over their bounding box."""
    X = np.asarray(coords, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if cells_per_axis < 1:
        raise ValueError("cells_per_axis must be at least 1")
    lo, hi = X.min(axis=0), X.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    cell = np.minimum(((X - lo) / span * cells_per_axis).astype(np.int64), cells_per_axis - 1)
    labels = np.ravel_multi_index(cell.T, (cells_per_axis,) * X.shape[1])
    return Partition.from_labels(labels)


@dataclass
class LocalityProfile:
    radii: np.ndarray
    mean_ball: np.ndarray
    dimension: float
    local: bool


def locality_profile(dec: EnergyDecomposition, samples: int = 20, max_radius: int = 30,
                     seed: int = 0) -> LocalityProfile:
    """Mean k-ball sizes around sampled vertices and a fitted growth exponent.

    The exponent is the log-log slope of ``#N_k`` against ``k`` over radii
    where the ball is still below half the graph.  A graph whose 1-balls
    already cover more than half the vertices is reported as non-local.
    """
    C = dec.offdiagonal_coupling()
    G = (C + C.T) > 0
    rng = np.random.default_rng(seed)
    src = rng.choice(dec.n, size=min(samples, dec.n), replace=False)
    D = csgraph.shortest_path(sp.csr_matrix(G, dtype=float), unweighted=True, indices=src)
    radii = np.arange(1, max_radius + 1)
    balls = np.array([(D <= k).sum(axis=1).mean() for k in radii])
    usable = balls < 0.5 * dec.n
    usable &= np.concatenate([[True], balls[1:] > balls[:-1]])
    if usable.sum() < 2:
        return LocalityProfile(radii, balls, float("inf"), False)
    k = radii[usable]
    # skip the smallest radii where the constant offset dominates
    k0 = max(1, k.size // 3)
    kk, bb = k[k0 - 1:], balls[usable][k0 - 1:]
    if kk.size < 2:
        kk, bb = k, balls[usable]
    slope = np.polyfit(np.log(kk), np.log(bb), 1)[0]
    return LocalityProfile(radii, balls, float(slope), True)
