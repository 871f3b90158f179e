"""Seeded test-problem generators: proximity graphs, KNN graphs, a roll surface,
five-point finite differences and P1 finite elements."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .energy import EnergyDecomposition, assemble
from .linalg import SparseSymMatrix

# Bump when a generator's output for a fixed seed changes.
GENERATOR_VERSION = 1


@dataclass
class GeneratedProblem:
    dec: EnergyDecomposition
    A: SparseSymMatrix
    coords: np.ndarray | None = None
    meta: dict = field(default_factory=dict)


def _streams(seed: int, count: int):
    """Independent generators derived from one 64-bit seed."""
    ss = np.random.SeedSequence([int(seed) & (2**64 - 1), GENERATOR_VERSION])
    return [np.random.default_rng(s) for s in ss.spawn(count)]


def _finish(dec, coords, meta) -> GeneratedProblem:
    return GeneratedProblem(dec, assemble(dec), coords, meta)


def proximity_graph(points, radius2: float, loop_weight: float = 1.0) -> EnergyDecomposition:
    """Edges ``w = 1/r^2`` for all pairs with ``r^2 <= radius2`` plus self-loops."""
    X = np.asarray(points, dtype=float)
    n = X.shape[0]
    pairs = cKDTree(X).query_pairs(np.sqrt(radius2), output_type="ndarray")
    pairs = pairs[np.lexsort((pairs[:, 1], pairs[:, 0]))] if pairs.size else np.zeros((0, 2), np.int64)
    r2 = np.sum((X[pairs[:, 0]] - X[pairs[:, 1]]) ** 2, axis=1)
    keep = r2 <= radius2
    pairs, r2 = pairs[keep], r2[keep]
    if np.any(r2 == 0):
        raise ValueError("coincident points")
    return EnergyDecomposition.from_graph(n, pairs, 1.0 / r2, np.arange(n), np.full(n, loop_weight))


def random_geometric_laplacian(n: int, d: int = 2, eta: float = 2.5, seed: int = 0) -> GeneratedProblem:
    if n < 2:
        raise ValueError("n must be at least 2")
    if d not in (2, 3):
        raise ValueError("d must be 2 or 3")
    if not eta > 0:
        raise ValueError("eta must be positive")
    (rng,) = _streams(seed, 1)
    X = rng.random((n, d))
    dec = proximity_graph(X, eta / n ** (2.0 / d))
    return _finish(dec, X, {"generator": "geometric", "n": n, "d": d, "eta": eta, "seed": seed})


def knn_edges(X, k):
    """Union-rule KNN edge list; ``k`` may vary per point."""
    X = np.asarray(X, dtype=float)
    n = X.shape[0]
    k = np.broadcast_to(np.asarray(k, dtype=np.int64), (n,))
    kmax = int(k.max())
    if kmax >= n:
        raise ValueError("k must be smaller than n")
    # ask for one extra neighbor so a point's own index can be dropped
    _, idx = cKDTree(X).query(X, k=kmax + 1)
    rows, cols = [], []
    for i in range(n):
        nb = idx[i][idx[i] != i][: k[i]]
        rows.append(np.full(nb.size, i))
        cols.append(nb)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    lo, hi = np.minimum(r, c), np.maximum(r, c)
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


def knn_graph_laplacian(n: int, seed: int = 0, k_inner: int = 15, k_outer: int = 5,
                        disk_center=(0.5, 0.5), disk_radius: float = 0.25,
                        points=None) -> GeneratedProblem:
    if n <= max(k_inner, k_outer):
        raise ValueError("n must exceed the neighbor counts")
    if points is None:
        (rng,) = _streams(seed, 1)
        X = rng.random((n, 2))
    else:
        X = np.asarray(points, dtype=float).reshape(n, -1)
    inside = np.linalg.norm(X[:, :2] - np.asarray(disk_center), axis=1) <= disk_radius
    E = knn_edges(X, np.where(inside, k_inner, k_outer))
    r2 = np.sum((X[E[:, 0]] - X[E[:, 1]]) ** 2, axis=1)
    dec = EnergyDecomposition.from_graph(n, E, 1.0 / r2, np.arange(n), np.ones(n))
    meta = {"generator": "knn", "n": n, "k_inner": k_inner, "k_outer": k_outer, "seed": seed}
    return _finish(dec, X, meta)


def roll_theta(t, a):
    return np.log1p(t * np.expm1(4 * np.pi * a)) / a


def roll_rho(t, a):
    return a / np.sqrt(1 + a * a) * (t + 1.0 / np.expm1(4 * np.pi * a))


def roll_surface_points(n: int, a: float, rng) -> np.ndarray:
    t = rng.random(n)
    z = rng.random(n)
    jitter = rng.uniform(0.9, 1.1, n)
    rho, th = roll_rho(t, a), roll_theta(t, a)
    return np.column_stack([jitter * rho * np.cos(th), jitter * rho * np.sin(th), z])


def roll_surface_laplacian(n: int, a: float = 0.1, eta: float = 2.0, seed: int = 0) -> GeneratedProblem:
    """Proximity graph on a jittered spiral sheet of unit area in 3-D.

    The cut-off radius uses the surface dimension (``r^2 <= eta / n``) since the
    points sample a two-dimensional sheet.
    """
    if not a > 0:
        raise ValueError("a must be positive")
    (rng,) = _streams(seed, 1)
    X = roll_surface_points(n, a, rng)
    dec = proximity_graph(X, eta / n)
    return _finish(dec, X, {"generator": "roll", "n": n, "a": a, "eta": eta, "seed": seed})


def default_contrast_field(contrast: float = 1e3):
    """Background 1 with a few high-coefficient channels and inclusions."""

    def field_fn(x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        hot = (np.abs(y - 0.3) < 0.04) & (x > 0.1) & (x < 0.8)
        hot |= (np.abs(x - 0.65) < 0.04) & (y > 0.35) & (y < 0.9)
        cx = np.mod(x * 5, 1.0) - 0.5
        cy = np.mod(y * 5, 1.0) - 0.5
        hot |= (cx**2 + cy**2 < 0.15**2) & (y > 0.5) & (x < 0.5)
        return np.where(hot, contrast, 1.0)

    return field_fn


def fd5_highcontrast(nx: int, ny: int, contrast_field=None, base: float = 1.0) -> GeneratedProblem:
    """Five-point finite differences on an ``nx`` by ``ny`` grid of interior nodes.

    Node ``(i, j)`` sits at ``((i+1)h_x, (j+1)h_y)`` and has index ``j*nx + i``.
    ``contrast_field(x, y)`` gives the coefficient at edge midpoints; edges to
    boundary nodes become one-vertex elements.
    """
    if nx < 2 or ny < 2:
        raise ValueError("grid must be at least 2x2")
    field_fn = contrast_field if contrast_field is not None else (lambda x, y: np.full(np.shape(x), 1.0))
    hx, hy = 1.0 / (nx + 1), 1.0 / (ny + 1)
    n = nx * ny
    I, J = np.meshgrid(np.arange(-1, nx), np.arange(ny), indexing="xy")
    # horizontal edges (i,j)-(i+1,j) for i = -1..nx-1
    hi_, hj = I.ravel(), J.ravel()
    hcoef = base * field_fn((hi_ + 1.5) * hx, (hj + 1) * hy) / hx**2
    I, J = np.meshgrid(np.arange(nx), np.arange(-1, ny), indexing="xy")
    vi, vj = I.ravel(), J.ravel()
    vcoef = base * field_fn((vi + 1) * hx, (vj + 1.5) * hy) / hy**2
    if np.any(np.asarray(hcoef) <= 0) or np.any(np.asarray(vcoef) <= 0):
        raise ValueError("coefficients must be positive")

    ptr, verts, vals = [0], [], []

    def add(a_in, b_in, a_idx, b_idx, w):
        for ai, bi, u, v, c in zip(a_in, b_in, a_idx, b_idx, w):
            if ai and bi:
                verts.extend((u, v))
                vals.extend((c, -c, -c, c))
            elif ai or bi:
                verts.append(u if ai else v)
                vals.append(c)
            else:
                continue
            ptr.append(len(verts))

    add(hi_ >= 0, hi_ + 1 < nx, hj * nx + hi_, hj * nx + hi_ + 1, hcoef)
    add(vj >= 0, vj + 1 < ny, vj * nx + vi, (vj + 1) * nx + vi, vcoef)
    dec = EnergyDecomposition(n, ptr, verts, vals)
    gi, gj = np.meshgrid(np.arange(nx), np.arange(ny), indexing="xy")
    coords = np.column_stack([(gi.ravel() + 1) * hx, (gj.ravel() + 1) * hy])
    return _finish(dec, coords, {"generator": "fd5", "nx": nx, "ny": ny, "base": base})


def p1_stiffness(vertices, coef) -> np.ndarray:
    """Exact P1 stiffness of one triangle for a constant 2x2 coefficient."""
    V = np.asarray(vertices, dtype=float)
    T = np.array([V[1] - V[0], V[2] - V[0]]).T
    area = 0.5 * abs(np.linalg.det(T))
    G = np.linalg.solve(T.T, np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]])).T
    K = area * G @ np.asarray(coef, dtype=float) @ G.T
    return 0.5 * (K + K.T)


def anisotropic_coefficient(theta, mu, e1, e2):
    c, s = np.cos(theta), np.sin(theta)
    R = np.array([[c, s], [-s, c]])
    return R @ np.diag([mu * e1, mu * e2]) @ R.T


def default_mu_field(contrast: float = 1e6):
    return default_contrast_field(contrast)


def fem_anisotropic(nx: int, ny: int, mu_field=None, theta=None, roughness: float = 0.1,
                    seed: int = 0) -> GeneratedProblem:
    """P1 elements on an ``nx`` by ``ny`` cell grid of the unit square, each cell cut
    into two triangles, with the coefficient sampled at triangle centroids.
    Boundary nodes are removed; interior node ``(i, j)``, ``1 <= i < nx``, has
    index ``(j-1)*(nx-1) + i-1``."""
    if nx < 2 or ny < 2:
        raise ValueError("grid must be at least 2x2 cells")
    mu_field = mu_field if mu_field is not None else (lambda x, y: np.ones(np.shape(x)))
    theta = theta if theta is not None else (lambda x, y: np.pi * (x + y))
    (rng,) = _streams(seed, 1)
    hx, hy = 1.0 / nx, 1.0 / ny
    mx = nx - 1

    def node(i, j):
        if i <= 0 or j <= 0 or i >= nx or j >= ny:
            return -1
        return (j - 1) * mx + i - 1

    tris = []
    for j in range(ny):
        for i in range(nx):
            a, b, c, d = (i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)
            tris.append((a, b, d))
            tris.append((b, c, d))
    nt = len(tris)
    w = rng.uniform(-roughness, roughness, (nt, 2))
    ptr, verts, vals = [0], [], []
    for t, tri in enumerate(tris):
        P = np.array([(p[0] * hx, p[1] * hy) for p in tri])
        cx, cy = P.mean(axis=0)
        mu = float(mu_field(cx, cy))
        if not mu > 0:
            raise ValueError("mu must be positive")
        coef = anisotropic_coefficient(float(theta(cx, cy)), mu, 1 + w[t, 0], 1 + w[t, 1])
        if np.linalg.eigvalsh(coef)[0] <= 0:
            raise ValueError(f"coefficient not positive definite on triangle {t}")
        K = p1_stiffness(P, coef)
        ids = np.array([node(*p) for p in tri])
        keep = ids >= 0
        if not keep.any():
            continue
        verts.extend(ids[keep].tolist())
        vals.extend(K[np.ix_(keep, keep)].ravel().tolist())
        ptr.append(len(verts))
    n = mx * (ny - 1)
    dec = EnergyDecomposition(n, ptr, verts, vals)
    gi, gj = np.meshgrid(np.arange(1, nx), np.arange(1, ny), indexing="xy")
    coords = np.column_stack([gi.ravel() * hx, gj.ravel() * hy])
    meta = {"generator": "fem", "nx": nx, "ny": ny, "roughness": roughness, "seed": seed}
    return _finish(dec, coords, meta)


GENERATORS = {
    "geometric": random_geometric_laplacian,
    "knn": knn_graph_laplacian,
    "roll": roll_surface_laplacian,
    "fd5": fd5_highcontrast,
    "fem": fem_anisotropic,
}


def random_energy_decomposition(n: int, m: int, seed: int = 0, max_support: int = 4,
                                anchor: float = 0.1) -> GeneratedProblem:
    """Random PSD elements (Gram matrices of random factors) on random supports
    plus a self-loop anchor per vertex, so the assembled matrix is PD."""
    (rng,) = _streams(seed, 1)
    ptr, verts, vals = [0], [], []
    for _ in range(m):
        s = int(rng.integers(1, min(max_support, n) + 1))
        sup = np.sort(rng.choice(n, size=s, replace=False))
        r = int(rng.integers(1, s + 1))
        F = rng.standard_normal((s, r))
        verts.extend(sup.tolist())
        vals.extend((F @ F.T).ravel().tolist())
        ptr.append(len(verts))
    for v in range(n):
        verts.append(v)
        vals.append(anchor)
        ptr.append(len(verts))
    dec = EnergyDecomposition(n, ptr, verts, vals)
    return _finish(dec, None, {"generator": "random", "n": n, "m": m, "seed": seed})
