"""Text formats for decompositions, partitions, coarse spaces, tables and run manifests.

EDX1 (energy decomposition)::

    EDX1 n m
    k s i_1 ... i_s
    a_11 a_12 ... a_1s a_22 ... a_ss      (upper triangle, row-major)

one pair of lines per element, 0-based ids, reals at 17 significant digits.

CSX1 (coarse space)::

    CSX1 n M N q
    j s q_j v_1 ... v_s
    s*q_j reals, row-major (row = patch vertex, column = eigen index)

Partition files hold one line ``patch_id: v_1 v_2 ...`` per patch.
"""

from __future__ import annotations

import csv
import hashlib
import json
import platform
from pathlib import Path

import numpy as np

from . import __version__, mmio
from .energy import EnergyDecomposition, Partition
from .linalg import SparseSymMatrix

_FMT = "%.17g"
CSV_SCHEMA_VERSION = 1


def _fmt(vals) -> str:
    return " ".join(_FMT % v for v in vals)


def write_edx(path, dec: EnergyDecomposition) -> None:
    with open(path, "w") as fh:
        fh.write(f"EDX1 {dec.n} {dec.m}\n")
        for e in range(dec.m):
            sup = dec.support(e)
            M = dec.local_matrix(e)
            fh.write(f"{e} {sup.size} " + " ".join(map(str, sup.tolist())) + "\n")
            fh.write(_fmt(M[np.triu_indices(sup.size)]) + "\n")


def read_edx(path) -> EnergyDecomposition:
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 3 or head[0] != "EDX1":
            raise ValueError("not an EDX1 file")
        n, m = int(head[1]), int(head[2])
        ptr, verts, vals = [0], [], []
        for k in range(m):
            ids = fh.readline().split()
            if not ids:
                raise ValueError(f"truncated file at element {k}")
            if int(ids[0]) != k:
                raise ValueError(f"element {k} labelled {ids[0]}")
            s = int(ids[1])
            sup = [int(t) for t in ids[2:]]
            if len(sup) != s:
                raise ValueError(f"element {k}: expected {s} indices")
            tri = np.array(fh.readline().split(), dtype=float)
            if tri.size != s * (s + 1) // 2:
                raise ValueError(f"element {k}: expected {s * (s + 1) // 2} values")
            M = np.zeros((s, s))
            M[np.triu_indices(s)] = tri
            M = M + np.triu(M, 1).T
            verts.extend(sup)
            vals.extend(M.ravel().tolist())
            ptr.append(len(verts))
    return EnergyDecomposition(n, ptr, verts, vals)


def write_partition(path, partition: Partition) -> None:
    with open(path, "w") as fh:
        for j, P in enumerate(partition.patches):
            fh.write(f"{j}: " + " ".join(map(str, P.tolist())) + "\n")


def read_partition(path, n: int | None = None) -> Partition:
    patches = {}
    with open(path) as fh:
        for line in fh:
            if not line.strip():
                continue
            head, _, body = line.partition(":")
            patches[int(head)] = [int(t) for t in body.split()]
    if sorted(patches) != list(range(len(patches))):
        raise ValueError("patch ids must be 0..M-1")
    return Partition([patches[j] for j in range(len(patches))], n)


def write_csx(path, coarse) -> None:
    with open(path, "w") as fh:
        fh.write(f"CSX1 {coarse.n} {len(coarse.partition)} {coarse.N} {coarse.q}\n")
        for j, (P, B) in enumerate(zip(coarse.partition.patches, coarse.phi_blocks)):
            fh.write(f"{j} {P.size} {B.shape[1]} " + " ".join(map(str, P.tolist())) + "\n")
            fh.write(_fmt(B.ravel()) + "\n")


def read_csx(path):
    """Return ``(partition, q, phi_blocks)``."""
    with open(path) as fh:
        head = fh.readline().split()
        if len(head) != 5 or head[0] != "CSX1":
            raise ValueError("not a CSX1 file")
        n, M, _, q = (int(t) for t in head[1:])
        patches, blocks = [], []
        for j in range(M):
            ids = fh.readline().split()
            s, qj = int(ids[1]), int(ids[2])
            patches.append([int(t) for t in ids[3:3 + s]])
            blocks.append(np.array(fh.readline().split(), dtype=float).reshape(s, qj))
    return Partition(patches, n), q, blocks


def write_measurements_csv(path, table, q: int) -> None:
    """Per-patch table: ``patch_id, size, lambda_1..lambda_{q+1}, eps, delta, alpha``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch_id", "size"] + [f"lambda_{i + 1}" for i in range(q + 1)]
                   + ["eps", "delta", "alpha"])
        for t in table:
            lam = list(t.lambda_interior[: q + 1]) + [""] * (q + 1 - min(q + 1, len(t.lambda_interior)))
            alpha = "" if t.alpha is None else _FMT % t.alpha
            w.writerow([t.patch_id, t.size] + [_FMT % v if v != "" else "" for v in lam]
                       + [_FMT % t.error_factor, _FMT % t.condition_factor, alpha])


def write_radii_csv(path, basis) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["column", "radius", "support_size", "eta", "flagged"])
        for c in basis.columns:
            w.writerow([c.index, c.radius, c.support.size, _FMT % c.eta, int(c.hit_cap)])


def write_rows_csv(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_FMT % v if isinstance(v, float) else v for v in r])


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True, default=str).encode()).hexdigest()


def write_manifest(directory, config: dict, inputs=(), outputs=(), extra: dict | None = None) -> Path:
    directory = Path(directory)
    man = {
        "schema": CSV_SCHEMA_VERSION,
        "library": "edsolve",
        "version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": config,
        "config_hash": config_hash(config),
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    if extra:
        man.update(extra)
    path = directory / "manifest.json"
    path.write_text(json.dumps(man, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.bool_):
        return bool(o)
    raise TypeError(type(o).__name__)


def save_hierarchy(directory, h, config: dict | None = None, with_reduced: bool = True) -> Path:
    """Write a hierarchy: per level partition, CSX1 coarse space, localized basis,
    complement stiffness and reduced EDX; the finest matrix and the bottom
    operator; and a manifest with the per-level table."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    outs = []
    a0 = d / "A.mtx"
    mmio.write_symmetric(a0, h.levels[0].A_prev if h.levels else h.bottom)
    outs.append(a0)
    levels = []
    for lev in h.levels:
        ld = d / f"level{lev.level}"
        ld.mkdir(exist_ok=True)
        files = {
            "partition": ld / "partition.txt",
            "coarse": ld / "coarse.csx",
            "psi": ld / "psi.mtx",
            "B": ld / "B.mtx",
        }
        write_partition(files["partition"], lev.partition)
        write_csx(files["coarse"], lev.coarse)
        mmio.write_general(files["psi"], lev.Psi)
        mmio.write_symmetric(files["B"], SparseSymMatrix.from_scipy(lev.b_matrix(), check=False))
        if with_reduced:
            files["reduced"] = ld / "reduced.edx"
            write_edx(files["reduced"], lev.reduced_dec)
        if lev.basis is not None:
            files["radii"] = ld / "radii.csv"
            write_radii_csv(files["radii"], lev.basis)
        outs.extend(files.values())
        levels.append({"level": lev.level, "N_prev": lev.N_prev, "N": lev.N, "eps": lev.eps,
                       "delta": lev.delta, "eps_loc": lev.eps_loc})
    bottom = d / "bottom.mtx"
    mmio.write_symmetric(bottom, h.bottom)
    outs.append(bottom)
    table = [dict(zip(["operator", "size", "nnz", "condition", "complexity"], r)) for r in h.table()]
    cfg = config if config is not None else {"eps2_schedule": h.config.eps2_schedule, "c": h.config.c,
                                             "q": h.config.q, "loc_mode": h.config.loc_mode}
    return write_manifest(d, cfg, outputs=outs, extra={"levels": levels, "table": table})


def load_hierarchy(directory):
    """Rebuild a solvable hierarchy from :func:`save_hierarchy` output."""
    from .coarse import construct_phi
    from .mmd import LevelRecord, MMDConfig, MMDHierarchy

    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    A = mmio.read(d / "A.mtx")
    levels = []
    cur = A
    for info in man["levels"]:
        ld = d / f"level{info['level']}"
        partition, q, blocks = read_csx(ld / "coarse.csx")
        coarse = construct_phi(None, partition, q, blocks)
        Psi = mmio.read(ld / "psi.mtx").tocsc()
        B = mmio.read(ld / "B.mtx").to_scipy()
        An = (Psi.T @ cur.to_scipy() @ Psi).tocsr()
        A_next = SparseSymMatrix.from_scipy(0.5 * (An + An.T), check=False)
        rec = LevelRecord(info["level"], partition, coarse, Psi, cur, A_next, None, info["eps"],
                          info["delta"], info["eps_loc"], B=B, b_diag=B.diagonal())
        levels.append(rec)
        cur = A_next
    bottom = mmio.read(d / "bottom.mtx")
    cfg = man["config"]
    config = MMDConfig(cfg.get("eps2_schedule", [1.0]), c=cfg.get("c", 50.0), q=cfg.get("q", 1),
                       loc_mode=cfg.get("loc_mode", "relaxed"))
    return MMDHierarchy(levels, bottom, config)
