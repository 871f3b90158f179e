"""Multiresolution matrix decomposition with localization and the multilevel solver."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._validation import check_vector
from .coarse import CoarseSpace, construct_phi, exact_psi
from .energy import EnergyDecomposition, Partition, assemble
from .linalg import DiagonalPreconditioner, SparseSymMatrix, pcg_solve, sym_extremes
from .localize import LocalizedBasis, construct_tilde_psi, exact_column
from .partition import pair_cluster

log = logging.getLogger(__name__)

DENSE_BOTTOM = 512


class NoCompressionError(RuntimeError):
    """A level failed to reduce the number of unknowns."""


@dataclass
class MMDConfig:
    """``eps2_schedule`` lists the squared target error factor per level (increasing)."""

    eps2_schedule: list
    c: float = 50.0
    q: int = 1
    loc_mode: str = "relaxed"
    loc_target: float | None = None
    inner_rtol: float | None = None
    min_size: int = 1
    size_weighted: bool = False
    merge: str = "none"
    materialize_b: bool = True
    reduced_max_entries: int | None = 2_000_000
    threads: int = 1

    def __post_init__(self):
        s = [float(v) for v in self.eps2_schedule]
        if not s or any(v <= 0 for v in s):
            raise ValueError("eps2_schedule must contain positive values")
        if any(b <= a for a, b in zip(s, s[1:])):
            raise ValueError("eps2_schedule must be strictly increasing")
        if self.loc_mode not in ("relaxed", "strict"):
            raise ValueError("loc_mode must be 'relaxed' or 'strict'")
        if self.merge not in ("none", "support", "subset", "patch_pair"):
            raise ValueError("merge must be 'none', 'support', 'subset' or 'patch_pair'")
        self.eps2_schedule = s


def auto_schedule(n: int, eps2_first: float, levels: int, p: int = 1, l: int = 0,
                  gamma: float | None = None) -> list:
    """Geometric schedule with ratio ``gamma = (log(1/eps) + log n)^(p+l)`` unless
    ``gamma`` is given."""
    eps = np.sqrt(eps2_first)
    if gamma is None:
        gamma = (np.log(1.0 / eps) + np.log(n)) ** (p + l)
    if gamma <= 1:
        raise ValueError("scale ratio must exceed 1")
    return [float((eps * gamma**k) ** 2) for k in range(levels)]


@dataclass(eq=False)
class LevelRecord:
    level: int
    partition: Partition
    coarse: CoarseSpace
    Psi: sp.csc_matrix
    A_prev: SparseSymMatrix
    A_next: SparseSymMatrix
    reduced_dec: EnergyDecomposition
    eps: float
    delta: float
    eps_loc: float
    B: sp.csr_matrix | None = None
    b_diag: np.ndarray | None = field(default=None, repr=False)
    basis: LocalizedBasis | None = field(default=None, repr=False)

    @property
    def N_prev(self) -> int:
        return self.coarse.n

    @property
    def N(self) -> int:
        return self.coarse.N

    def apply_b(self, v):
        if self.B is not None:
            return self.B @ v
        return self.coarse.ut(self.A_prev @ self.coarse.u(v))

    def b_matrix(self) -> sp.csr_matrix:
        if self.B is None:
            U = self.coarse.u_matrix()
            B = (U.T @ self.A_prev.to_scipy() @ U).tocsr()
            self.B = 0.5 * (B + B.T)
        return self.B


@dataclass(eq=False)
class MMDHierarchy:
    levels: list
    bottom: SparseSymMatrix
    config: MMDConfig
    lambda_max_A: float | None = None

    @property
    def K(self) -> int:
        return len(self.levels)

    @property
    def n(self) -> int:
        return self.levels[0].N_prev if self.levels else self.bottom.dim

    def composite_psi(self, upto: int | None = None) -> sp.csc_matrix:
        upto = self.K if upto is None else upto
        P = sp.identity(self.n, format="csc")
        for lev in self.levels[:upto]:
            P = (P @ lev.Psi).tocsc()
        return P

    def table(self, kappa: bool = True) -> list:
        """Rows ``(label, size, nnz, condition, nnz*condition)`` per operator."""
        rows = []
        A0 = self.levels[0].A_prev if self.levels else self.bottom
        ops = [("A", A0.to_scipy())]
        for lev in self.levels:
            ops.append((f"B{lev.level}", lev.b_matrix()))
        ops.append((f"A{self.K}", self.bottom.to_scipy()))
        for name, M in ops:
            cond = float("nan")
            if kappa and M.shape[0]:
                lo, hi = sym_extremes(SparseSymMatrix.from_scipy(M, check=False))
                cond = hi / lo
            rows.append((name, M.shape[0], M.nnz, cond, M.nnz * cond))
        return rows


def _rows_dense(Pr: sp.csr_matrix, rows):
    """Dense block of the given rows restricted to their nonzero columns."""
    ip, ind, dat = Pr.indptr, Pr.indices, Pr.data
    lo, hi = ip[rows], ip[rows + 1]
    lens = hi - lo
    idx = np.repeat(lo - np.cumsum(lens) + lens, lens) + np.arange(int(lens.sum()))
    cols_all = ind[idx]
    cols, inv = np.unique(cols_all, return_inverse=True)
    R = np.zeros((rows.size, cols.size))
    R[np.repeat(np.arange(rows.size), lens), inv] = dat[idx]
    return R, cols


def _boundary_elements(dec: EnergyDecomposition, partition: Partition) -> np.ndarray:
    """Elements whose active vertices span more than one patch."""
    act = dec.slot_active
    pat = partition.patch_of[dec.slot_vertex]
    big = np.iinfo(np.int64).max
    lo = np.where(act, pat, big)
    hi = np.where(act, pat, -1)
    starts = dec.slot_ptr[:-1]
    mn = np.minimum.reduceat(lo, starts)
    mx = np.maximum.reduceat(hi, starts)
    has = mx >= 0
    return np.flatnonzero(has & (mn != mx))


def _merge_equal(supports, mats):
    merged = {}
    for s, M in zip(supports, mats):
        key = s.tobytes()
        if key in merged:
            merged[key][1] += M
        else:
            merged[key] = [s, M.copy()]
    return [v[0] for v in merged.values()], [v[1] for v in merged.values()]


def _merge_subsets(supports, mats):
    """Fold every element into a kept element whose support contains its own,
    largest supports first."""
    order = sorted(range(len(supports)), key=lambda i: -supports[i].size)
    kept_s, kept_m = [], []
    by_vertex: dict[int, list] = {}
    for i in order:
        s = supports[i]
        host = -1
        for k in by_vertex.get(int(s[0]), ()):
            hs = kept_s[k]
            pos = np.searchsorted(hs, s)
            if np.all(pos < hs.size) and np.array_equal(hs[np.minimum(pos, hs.size - 1)], s):
                host = k
                break
        if host < 0:
            kept_s.append(s)
            kept_m.append(mats[i].copy())
            for v in s.tolist():
                by_vertex.setdefault(v, []).append(len(kept_s) - 1)
        else:
            ix = np.searchsorted(kept_s[host], s)
            kept_m[host][np.ix_(ix, ix)] += mats[i]
    return kept_s, kept_m


def reduced_inherited(dec: EnergyDecomposition, partition: Partition, Psi,
                      merge: str = "none", max_entries: int | None = None) -> EnergyDecomposition:
    """Energy decomposition of ``Psi^T A Psi`` on the coarse coordinates: one
    aggregated element per patch plus the image of each boundary element.

    If the element blocks hold more than ``max_entries`` values, elements
    with equal supports and then elements with nested supports are summed
    (both lossless) until the budget is met or nothing is left to merge.
    """
    Pr = sp.csr_matrix(Psi)
    Pr.sort_indices()
    N = Pr.shape[1]
    supports, mats = [], []
    for P in partition.patches:
        R, cols = _rows_dense(Pr, P)
        if cols.size == 0:
            continue
        interior = dec.local_blocks(P)[0]
        supports.append(cols)
        mats.append(R.T @ interior @ R)
    bnd = _boundary_elements(dec, partition)
    if merge == "patch_pair" and bnd.size:
        groups = {}
        for e in bnd:
            sup = dec.support(e)
            key = tuple(np.unique(partition.patch_of[sup]).tolist())
            groups.setdefault(key, []).append(e)
        for es in groups.values():
            sup = np.unique(np.concatenate([dec.support(e) for e in es]))
            loc = {v: i for i, v in enumerate(sup.tolist())}
            M = np.zeros((sup.size, sup.size))
            for e in es:
                li = [loc[v] for v in dec.support(e).tolist()]
                M[np.ix_(li, li)] += dec.local_matrix(e)
            R, cols = _rows_dense(Pr, sup)
            if cols.size:
                supports.append(cols)
                mats.append(R.T @ M @ R)
    else:
        for e in bnd:
            R, cols = _rows_dense(Pr, dec.support(e))
            if cols.size == 0:
                continue
            supports.append(cols)
            mats.append(R.T @ dec.local_matrix(e) @ R)
    if merge == "support":
        supports, mats = _merge_equal(supports, mats)
    elif merge == "subset":
        supports, mats = _merge_subsets(supports, mats)
    if max_entries is not None:
        for fold in (_merge_equal, _merge_subsets):
            total = sum(s.size**2 for s in supports)
            if total <= max_entries:
                break
            supports, mats = fold(supports, mats)
            log.info("reduced decomposition: %d entries over budget, merged to %d elements",
                     total, len(supports))
    sizes = np.array([s.size for s in supports], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(sizes)])
    verts = np.concatenate(supports) if supports else np.zeros(0, dtype=np.int64)
    vals = np.concatenate([(0.5 * (M + M.T)).ravel() for M in mats]) if mats else np.zeros(0)
    return EnergyDecomposition(N, ptr, verts, vals)


def _build_level(k, dec, A, eps2, cfg: MMDConfig, lam_max_hint=None) -> LevelRecord:
    eps = np.sqrt(eps2)
    res = pair_cluster(dec, eps, cfg.c, cfg.q, size_weighted=cfg.size_weighted)
    coarse = construct_phi(dec, res.partition, cfg.q, res.phi_blocks, res.eps)
    if coarse.N >= dec.n:
        raise NoCompressionError(
            f"level {k}: clustering with eps^2={eps2:g} left {len(res.partition)} patches "
            f"for {dec.n} unknowns; raise eps or c")
    if cfg.loc_mode == "relaxed":
        eps_loc = eps
    else:
        target = cfg.loc_target if cfg.loc_target is not None else eps
        eps_loc = target / np.sqrt(coarse.N)
    basis = construct_tilde_psi(A, dec, coarse, eps_loc, cfg.inner_rtol, cfg.threads)
    Psi = basis.Psi
    An = (Psi.T @ A.to_scipy() @ Psi).tocsr()
    An = 0.5 * (An + An.T)
    An.eliminate_zeros()
    A_next = SparseSymMatrix.from_scipy(An, check=False)
    red = reduced_inherited(dec, res.partition, Psi, cfg.merge, cfg.reduced_max_entries)
    rec = LevelRecord(k, res.partition, coarse, Psi, A, A_next, red, res.error_factor,
                      res.condition_factor, eps_loc, basis=basis)
    if cfg.materialize_b:
        rec.b_matrix()
        rec.b_diag = rec.B.diagonal()
    else:
        rec.b_diag = coarse.complement_diagonal(A)
    log.info("level %d: N %d -> %d, eps=%.3g delta=%.3g mean radius %.2f, flagged %d",
             k, dec.n, coarse.N, rec.eps, rec.delta, basis.radii.mean(), basis.flagged)
    return rec


def mmd_decompose(dec: EnergyDecomposition, config: MMDConfig, A: SparseSymMatrix | None = None,
                  floor: int | None = None) -> MMDHierarchy:
    """Build levels until the schedule is exhausted or ``N <= floor``."""
    A = assemble(dec) if A is None else A
    levels = []
    cur_dec, cur_A = dec, A
    for k, eps2 in enumerate(config.eps2_schedule, start=1):
        if floor is not None and cur_A.dim <= floor:
            break
        rec = _build_level(k, cur_dec, cur_A, eps2, config)
        levels.append(rec)
        cur_dec, cur_A = rec.reduced_dec, rec.A_next
    return MMDHierarchy(levels, cur_A, config)


@dataclass
class MMDSolveResult:
    x: np.ndarray
    x_hierarchy: np.ndarray
    level_iterations: list
    bottom_iterations: int
    compensation_iterations: int
    compensation_converged: bool
    trace: dict = field(default_factory=dict, repr=False)


def _bottom_solve(A: SparseSymMatrix, b, tol):
    if A.dim <= DENSE_BOTTOM:
        c = sla.cho_factor(A.to_dense(), lower=True)
        return sla.cho_solve(c, b), 0
    r = pcg_solve(A, b, DiagonalPreconditioner.from_matrix(A), rel_tol=tol, max_iter=20 * A.dim)
    return r.x, r.iterations


def mmd_solve(h: MMDHierarchy, b, level_tol: float = 1e-6, compensate: bool = True,
              comp_tol: float = 1e-5, comp_max_iter: int | None = None,
              comp_norm: str = "energy", keep_trace: bool = False) -> MMDSolveResult:
    """Downward restriction with independent complement solves, bottom solve,
    upward prolongation, then an optional PCG correction on the original matrix.

    The correction starts from the hierarchy's answer and by default stops on
    an estimate of ``||x - x*||_A <= comp_tol ||b||_2`` (see ``pcg_solve``).
    """
    b = check_vector(b, h.n, "b")
    rhs = [b]
    zs, ys, iters = [], [], []
    for lev in h.levels:
        z = lev.coarse.ut(rhs[-1])
        pre = DiagonalPreconditioner.from_diagonal(lev.b_diag)
        r = pcg_solve(lev.apply_b, z, pre, rel_tol=level_tol, max_iter=20 * max(z.size, 1))
        zs.append(z)
        ys.append(r.x)
        iters.append(r.iterations)
        rhs.append(np.asarray(lev.Psi.T @ rhs[-1]).ravel())
    xb, bit = _bottom_solve(h.bottom, rhs[-1], level_tol)
    x = xb
    for lev, y in zip(reversed(h.levels), reversed(ys)):
        x = lev.coarse.u(y) + np.asarray(lev.Psi @ x).ravel()
    xh = x
    citer, cconv = 0, True
    if compensate and h.levels:
        A0 = h.levels[0].A_prev
        r = pcg_solve(A0, b, DiagonalPreconditioner.from_matrix(A0), rel_tol=comp_tol,
                      max_iter=comp_max_iter or 20 * A0.dim, x0=xh, norm=comp_norm)
        x, citer, cconv = r.x, r.iterations, r.converged
    trace = {"rhs": rhs, "z": zs, "y": ys, "bottom": xb} if keep_trace else {}
    return MMDSolveResult(x, xh, iters, bit, citer, cconv, trace)


def _a_norm(M, v):
    return float(np.sqrt(max(v @ (M @ v), 0.0)))


def _inv_norm_rhs(solve, v):
    return float(np.sqrt(max(v @ solve(v), 0.0)))


def measured_error_budget(h: MMDHierarchy, res: MMDSolveResult, lambda_min_A: float | None = None) -> dict:
    """Per-level measured error terms for one solve (desk scale; needs a trace).

    ``err_B`` and ``err_A`` are the achieved relative errors of the level
    solves on their actual right-hand sides; ``err_loc`` uses dense exact
    basis columns at every level.
    """
    if not res.trace:
        raise ValueError("solve with keep_trace=True")
    if lambda_min_A is None:
        lambda_min_A = sym_extremes(h.levels[0].A_prev)[0]
    inv_norm = 1.0 / lambda_min_A
    err_B, err_loc = [], []
    for lev, z, y in zip(h.levels, res.trace["z"], res.trace["y"]):
        B = lev.b_matrix().tocsc()
        lu = spla.splu(B)
        ex = lu.solve(z)
        e = y - ex
        den = _inv_norm_rhs(lu.solve, z)
        err_B.append(_a_norm(B, e) / den if den > 0 else 0.0)
        worst = _max_column_error(lev)
        err_loc.append(2.0 * np.sqrt(lev.N * inv_norm) * worst)
    Ab = h.bottom
    bK = res.trace["rhs"][-1]
    cK = sla.cho_factor(Ab.to_dense())
    exK = sla.cho_solve(cK, bK)
    den = float(np.sqrt(max(bK @ exK, 0.0)))
    err_A = _a_norm(Ab.to_scipy(), res.trace["bottom"] - exK) / den if den > 0 else 0.0
    K = h.K
    total = K * (max(err_B, default=0.0) + max(err_loc, default=0.0)) + err_A
    return {"err_B": err_B, "err_loc": err_loc, "err_A": err_A, "err_total": total}


def _max_column_error(lev: LevelRecord) -> float:
    Ad = lev.A_prev.to_dense()
    Phi = lev.coarse.phi_matrix().toarray()
    c = sla.cho_factor(Ad)
    X = sla.cho_solve(c, Phi)
    G = Phi.T @ X
    Psi = X @ np.linalg.inv(0.5 * (G + G.T))
    E = lev.Psi.toarray() - Psi
    return float(np.sqrt(np.max(np.einsum("ij,ij->j", E, Ad @ E))))


def kappa_bounds(h: MMDHierarchy, lambda_max_A: float | None = None) -> list:
    """Per level: measured ``kappa(B_k)`` and the bound
    ``(1 + e/sqrt(delta_{k-1}))^2 eps_k^2 delta_{k-1}``; ``e`` is
    ``sqrt(N_{k-1})`` times the previous level's worst localization error."""
    if lambda_max_A is None:
        lambda_max_A = sym_extremes(h.levels[0].A_prev)[1]
    out = []
    delta_prev, e_prev = lambda_max_A, 0.0
    for lev in h.levels:
        lo, hi = sym_extremes(SparseSymMatrix.from_scipy(lev.b_matrix(), check=False))
        bound = (1.0 + e_prev / np.sqrt(delta_prev)) ** 2 * lev.eps**2 * delta_prev
        out.append({"level": lev.level, "kappa": hi / lo, "bound": bound, "lambda_min": lo,
                    "lambda_max": hi, "eps": lev.eps, "delta_prev": delta_prev})
        e_prev = np.sqrt(lev.N_prev) * _max_column_error(lev) if lev.N_prev <= 4000 else float("nan")
        delta_prev = lev.delta
    return out


def accumulated_compression_error(h: MMDHierarchy, upto: int | None = None) -> tuple[float, float]:
    """Measured ``||A^{-1} - P A^{-1}||_2`` for the composite basis of the
    first ``upto`` levels, and the bound ``sum eps_k^2``."""
    upto = h.K if upto is None else upto
    A = h.levels[0].A_prev
    Psi = h.composite_psi(upto).toarray()
    Ad = A.to_dense()
    Ainv = np.linalg.inv(Ad)
    St = Psi.T @ Ad @ Psi
    R = Ainv - Psi @ np.linalg.solve(0.5 * (St + St.T), Psi.T)
    w = np.linalg.eigvalsh(0.5 * (R + R.T))
    bound = float(sum(lev.eps**2 for lev in h.levels[:upto]))
    return float(max(abs(w[0]), abs(w[-1]))), bound


@dataclass
class EigenRecovery:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    residuals: np.ndarray
    reciprocal_errors: np.ndarray | None


def eigen_recovery(Psi, A_st, count: int, A: SparseSymMatrix | None = None,
                   true_eigenvalues=None) -> EigenRecovery:
    """Smallest eigenpairs of the compressed stiffness lifted by ``Psi``.

    With ``A`` the residuals ``||A q - lambda q||_2`` are reported; with
    ``true_eigenvalues`` (or a small ``A``) the reciprocal errors are too.
    """
    S = A_st.toarray() if sp.issparse(A_st) else np.asarray(A_st)
    S = 0.5 * (S + S.T)
    Psi_d = Psi.toarray() if sp.issparse(Psi) else np.asarray(Psi)
    G = Psi_d.T @ Psi_d
    # generalized problem so lifted vectors are l2-normalized Ritz vectors
    lam, xi = sla.eigh(S, 0.5 * (G + G.T), subset_by_index=(0, count - 1))
    Q = Psi_d @ xi
    Q /= np.linalg.norm(Q, axis=0)
    res = np.full(count, np.nan)
    if A is not None:
        AQ = A.to_scipy() @ Q
        res = np.linalg.norm(AQ - Q * lam, axis=0)
        if true_eigenvalues is None and A.dim <= 4000:
            true_eigenvalues = np.linalg.eigvalsh(A.to_dense())[:count]
    rec = None
    if true_eigenvalues is not None:
        rec = np.abs(1.0 / lam - 1.0 / np.asarray(true_eigenvalues)[:count])
    return EigenRecovery(lam, Q, res, rec)


def one_level_identity_error(A: SparseSymMatrix, coarse: CoarseSpace) -> float:
    """Relative Frobenius error of ``A^{-1} = U B^{-1} U^T + Psi A_st^{-1} Psi^T``
    with the exact basis."""
    comp = exact_psi(A, coarse)
    U = coarse.u_matrix().toarray()
    Ad = A.to_dense()
    Ainv = np.linalg.inv(Ad)
    B = U.T @ Ad @ U
    R = U @ np.linalg.solve(B, U.T) + comp.Psi @ np.linalg.solve(comp.stiffness_dense(), comp.Psi.T)
    return float(np.linalg.norm(R - Ainv) / np.linalg.norm(Ainv))
