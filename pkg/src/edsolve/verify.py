"""Self-check suites behind ``edsolve verify``: each check recomputes a bound
from its definition and compares it with the measured quantity."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .coarse import compression_error, construct_phi, exact_psi, stiffness_condition_report
from .energy import Partition, closed_energy, diagonal_concentration, interior_energy, restricted_energy
from .localize import decay_certificate
from .measurements import partition_measurements
from .mmd import MMDConfig, measured_error_budget, mmd_decompose, mmd_solve, one_level_identity_error
from .partition import pair_cluster
from .problems import random_energy_decomposition, random_geometric_laplacian

PSD_SLACK = 1e-10


@dataclass
class Check:
    name: str
    passed: bool
    value: float
    limit: float

    def line(self) -> str:
        tag = "PASS" if self.passed else "FAIL"
        return f"{tag}  {self.name}: {self.value:.4g} (limit {self.limit:.4g})"


def _min_eig(M) -> float:
    M = np.asarray(M)
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def _scaled_min_eig(M, scale) -> float:
    return _min_eig(M) / max(scale, 1.0)


def suite_energy(trials: int = 50, n_max: int = 40, seed: int = 0) -> list[Check]:
    rng = np.random.default_rng(seed)
    worst_local = worst_part = worst_conc = np.inf
    for t in range(trials):
        n = int(rng.integers(3, n_max + 1))
        g = random_energy_decomposition(n, int(rng.integers(n, 3 * n)), seed=int(rng.integers(2**31)))
        dec, A = g.dec, g.A
        scale = float(np.abs(A.to_dense()).max())
        S = np.sort(rng.choice(n, size=int(rng.integers(1, n + 1)), replace=False))
        lo, mid, hi = interior_energy(dec, S), restricted_energy(A, S), closed_energy(dec, S)
        worst_local = min(worst_local, _scaled_min_eig(mid - lo, scale), _scaled_min_eig(hi - mid, scale))
        labels = rng.integers(0, max(1, n // 4), size=n)
        part = Partition.from_labels(labels)
        Ad = A.to_dense()
        low = np.zeros_like(Ad)
        high = np.zeros_like(Ad)
        for P in part.patches:
            ix = np.ix_(P, P)
            low[ix] += interior_energy(dec, P)
            high[ix] += closed_energy(dec, P)
        worst_part = min(worst_part, _scaled_min_eig(Ad - low, scale), _scaled_min_eig(high - Ad, scale))
        e = int(rng.integers(dec.m))
        E = dec.local_matrix(e)
        worst_conc = min(worst_conc, _scaled_min_eig(np.diag(diagonal_concentration(E)) - E, scale))
    return [
        Check("interior <= restricted <= closed", worst_local >= -PSD_SLACK, worst_local, -PSD_SLACK),
        Check("partition sandwich", worst_part >= -PSD_SLACK, worst_part, -PSD_SLACK),
        Check("E <= diagonal concentration", worst_conc >= -PSD_SLACK, worst_conc, -PSD_SLACK),
    ]


def suite_partition(n: int = 1000, eps2: float = 1e-3, c: float = 50.0, seed: int = 0) -> list[Check]:
    g = random_geometric_laplacian(n, 2, 2.5, seed)
    eps = np.sqrt(eps2)
    res = pair_cluster(g.dec, eps, c)
    pm = partition_measurements(g.dec, res.partition, 1)
    worst_prod = max(t.condition_factor * t.error_factor**2 for t in pm.patches)
    # delta_j >= lambda_q(interior_j), hence delta*eps^2 >= lambda_q/lambda_{q+1} per patch
    gap = min(t.condition_factor / t.lambda_interior[t.q - 1] for t in pm.patches
              if t.lambda_interior.size > t.q and t.lambda_interior[t.q - 1] > 0)
    return [
        Check("error factor <= eps", pm.eps <= eps * (1 + 1e-10), pm.eps, eps),
        Check("delta*eps^2 <= c", worst_prod <= c * (1 + 1e-10), worst_prod, c),
        Check("delta >= lambda_q(interior)", gap >= 1 - 1e-8, gap, 1.0),
    ]


def suite_compress(n: int = 800, eps2: float = 1e-3, c: float = 50.0, seed: int = 0) -> list[Check]:
    g = random_geometric_laplacian(n, 2, 2.5, seed)
    res = pair_cluster(g.dec, np.sqrt(eps2), c)
    coarse = construct_phi(g.dec, res.partition, 1, res.phi_blocks, res.eps)
    comp = exact_psi(g.A, coarse)
    err = compression_error(g.A, comp)
    rep = stiffness_condition_report(g.A, comp, res.condition_factor)
    e2 = res.error_factor**2
    return [
        Check("compression error <= eps^2", err <= e2 * (1 + 1e-8), err, e2),
        Check("lambda_min(A_st) >= lambda_min(A)", not rep["violates_lambda_min"],
              rep["lambda_min"], rep["lambda_min_A"]),
        Check("lambda_max(A_st) <= delta", not rep["violates_lambda_max"],
              rep["lambda_max"], res.condition_factor),
    ]


def suite_decay(n: int = 800, eps2: float = 1e-3, c: float = 50.0, columns: int = 5,
                k_max: int = 6, seed: int = 0) -> list[Check]:
    g = random_geometric_laplacian(n, 2, 2.5, seed)
    res = pair_cluster(g.dec, np.sqrt(eps2), c)
    coarse = construct_phi(g.dec, res.partition, 1, res.phi_blocks, res.eps)
    pm = partition_measurements(g.dec, res.partition, 1, with_alpha=True)
    comp = exact_psi(g.A, coarse)
    rng = np.random.default_rng(seed)
    worst_ratio, worst_pyth = 0.0, 0.0
    for i in rng.choice(coarse.N, size=min(columns, coarse.N), replace=False):
        j = coarse.coarse_patch[i]
        rows = decay_certificate(g.A, g.dec, coarse, int(i), k_max, pm.alpha,
                                 pm.patches[j].condition_factor, comp.Psi[:, i])
        exact2 = float(comp.Psi[:, i] @ (g.A @ comp.Psi[:, i]))
        for r in rows:
            worst_ratio = max(worst_ratio, (r.error2 - 1e-8) / r.bound)
            worst_pyth = max(worst_pyth, abs(r.energy2 - exact2 - r.error2) / exact2)
    return [
        Check("decay error <= bound", worst_ratio <= 1.0, worst_ratio, 1.0),
        Check("Pythagoras identity", worst_pyth <= 1e-8, worst_pyth, 1e-8),
    ]


def suite_mmd(n: int = 300, seed: int = 0) -> list[Check]:
    g = random_geometric_laplacian(n, 2, 2.5, seed)
    res = pair_cluster(g.dec, np.sqrt(1e-2), 50.0)
    coarse = construct_phi(g.dec, res.partition, 1, res.phi_blocks, res.eps)
    ident = one_level_identity_error(g.A, coarse)
    h = mmd_decompose(g.dec, MMDConfig([1e-3, 1e-2], c=50.0))
    b = np.random.default_rng(seed).standard_normal(n)
    sol = mmd_solve(h, b, level_tol=1e-8, compensate=False, keep_trace=True)
    budget = measured_error_budget(h, sol)
    Ad = g.A.to_dense()
    x = np.linalg.solve(Ad, b)
    e = sol.x_hierarchy - x
    rel = float(np.sqrt(e @ Ad @ e) / np.sqrt(b @ x))
    return [
        Check("one-level identity", ident <= 1e-8, ident, 1e-8),
        Check("multilevel error <= budget", rel <= budget["err_total"], rel, budget["err_total"]),
    ]


SUITES = {
    "energy": suite_energy,
    "partition": suite_partition,
    "compress": suite_compress,
    "decay": suite_decay,
    "mmd": suite_mmd,
}


def run_suite(name: str, **kwargs) -> list[Check]:
    if name == "all":
        out = []
        for key, fn in SUITES.items():
            out.extend(fn(**{k: v for k, v in kwargs.items() if k in fn.__code__.co_varnames}))
        return out
    fn = SUITES[name]
    return fn(**{k: v for k, v in kwargs.items() if k in fn.__code__.co_varnames})
