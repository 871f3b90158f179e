"""Patch-local quality measurements: error factor, condition factor and the
decay factor alpha."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from ._validation import check_index_set
from .energy import EnergyDecomposition, Partition
from .linalg import HouseholderFrame, _fix_signs, householder_extend

DEGENERATE_EIG = 1e-12
PENCIL_RTOL = 1e-12


class SingularPatchError(ValueError):
    """The closed energy of a patch is singular on its span."""


@dataclass
class PatchMeasurement:
    patch_id: int
    size: int
    q: int
    lambda_interior: np.ndarray
    error_factor: float
    condition_factor: float
    alpha: float | None = None
    phi: np.ndarray | None = field(default=None, repr=False)


def local_eigs(interior: np.ndarray, q: int):
    """First ``min(q + 1, s)`` interior eigenpairs (ascending, signs fixed)."""
    s = interior.shape[0]
    k = min(q + 1, s)
    try:
        w, V = sla.eigh(interior, subset_by_index=(0, k - 1), driver="evr")
    except np.linalg.LinAlgError:
        # MRRR occasionally fails on clustered spectra; the divide-and-conquer path does not
        w, V = np.linalg.eigh(interior)
        w, V = w[:k], V[:, :k]
    return w, _fix_signs(V)


def eps_from_eigs(w: np.ndarray, q: int, s: int) -> float:
    if q >= s:
        return 0.0
    lam = w[q]
    return float("inf") if lam <= DEGENERATE_EIG else 1.0 / np.sqrt(lam)


def delta_from_closed(closed: np.ndarray, phi: np.ndarray) -> float:
    """``||(Phi^T closed^{-1} Phi)^{-1}||_2`` via a Cholesky factor of ``closed``."""
    try:
        c = sla.cho_factor(closed, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularPatchError("closed energy is not positive definite on the patch") from exc
    G = phi.T @ sla.cho_solve(c, phi)
    g = np.linalg.eigvalsh(0.5 * (G + G.T))
    if g[0] <= 0:
        raise SingularPatchError("closed energy Gram matrix is singular")
    return float(1.0 / g[0])


def patch_core(interior: np.ndarray, closed: np.ndarray, q: int):
    """Return ``(eigenvalues, eps, phi, delta)`` for one patch.

    ``delta`` is ``inf`` when the closed energy is singular.
    """
    s = interior.shape[0]
    if q >= s:
        w = np.linalg.eigvalsh(interior)
        phi = np.eye(s)
    else:
        w, V = local_eigs(interior, q)
        phi = V[:, :q]
    eps = eps_from_eigs(w, q, s)
    try:
        delta = delta_from_closed(closed, phi)
    except SingularPatchError:
        delta = float("inf")
    return w, eps, phi, delta


def interior_spectrum(dec: EnergyDecomposition, P, count: int | None = None) -> np.ndarray:
    P = check_index_set(P, dec.n)
    count = P.size if count is None else int(count)
    if not 1 <= count <= P.size:
        raise ValueError(f"count must lie in [1, {P.size}]")
    interior = dec.local_blocks(P)[0]
    return sla.eigh(interior, eigvals_only=True, subset_by_index=(0, count - 1))


def error_factor(dec: EnergyDecomposition, P, q: int) -> float:
    if q < 1:
        raise ValueError("q must be at least 1")
    P = check_index_set(P, dec.n)
    if q >= P.size:
        return 0.0
    w = interior_spectrum(dec, P, q + 1)
    return eps_from_eigs(w, q, P.size)


def condition_factor(dec: EnergyDecomposition, P, Phi_j) -> float:
    P = check_index_set(P, dec.n)
    Phi_j = np.asarray(Phi_j, dtype=float).reshape(P.size, -1)
    closed = dec.interior_and_closed(P)[1]
    return delta_from_closed(closed, Phi_j)


def alpha_from_blocks(interior: np.ndarray, closed: np.ndarray, frame: HouseholderFrame) -> float:
    if frame.complement_dim == 0:
        return 1.0
    U = frame.dense_u()
    lo = U.T @ interior @ U
    hi = U.T @ closed @ U
    lo = 0.5 * (lo + lo.T)
    hi = 0.5 * (hi + hi.T)
    scale = max(np.linalg.norm(hi, 2), 1e-300)
    try:
        L = np.linalg.cholesky(lo)
    except np.linalg.LinAlgError:
        return float("inf")
    if np.min(np.diag(L)) ** 2 <= PENCIL_RTOL * scale:
        return float("inf")
    Linv_hi = sla.solve_triangular(L, hi, lower=True)
    W = sla.solve_triangular(L, Linv_hi.T, lower=True)
    return float(np.linalg.eigvalsh(0.5 * (W + W.T))[-1])


def alpha_factor(dec: EnergyDecomposition, P, frame: HouseholderFrame) -> float:
    """Largest ratio of closed to interior quadratic forms on the complement
    spanned by ``frame``; ``inf`` when the interior form is singular there."""
    P = check_index_set(P, dec.n)
    if frame.patch_dim != P.size:
        raise ValueError("frame does not match patch size")
    interior, closed = dec.interior_and_closed(P)
    return alpha_from_blocks(interior, closed, frame)


def measure_patch(dec: EnergyDecomposition, P, q: int, patch_id: int = 0,
                  with_alpha: bool = False) -> PatchMeasurement:
    P = check_index_set(P, dec.n)
    interior, closed = dec.interior_and_closed(P)
    w, eps, phi, delta = patch_core(interior, closed, q)
    alpha = None
    if with_alpha:
        alpha = alpha_from_blocks(interior, closed, householder_extend(phi)) if np.isfinite(eps) else float("inf")
    return PatchMeasurement(patch_id, int(P.size), q, w, eps, delta, alpha, phi)


@dataclass
class PartitionMeasurements:
    eps: float
    delta: float
    alpha: float | None
    patches: list[PatchMeasurement]

    def max_delta_eps2(self) -> float:
        return max(p.condition_factor * p.error_factor**2 for p in self.patches)


def partition_measurements(dec: EnergyDecomposition, partition: Partition, q: int = 1,
                           with_alpha: bool = False) -> PartitionMeasurements:
    table = [measure_patch(dec, P, q, j, with_alpha) for j, P in enumerate(partition.patches)]
    eps = max(t.error_factor for t in table)
    delta = max(t.condition_factor for t in table)
    alpha = max(t.alpha for t in table) if with_alpha else None
    return PartitionMeasurements(eps, delta, alpha, table)
