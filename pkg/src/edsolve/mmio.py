"""Matrix Market coordinate I/O (real; symmetric or general)."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .linalg import SparseSymMatrix

_FMT = "%.17g"


def write_symmetric(path, A: SparseSymMatrix, comment: str | None = None) -> None:
    """Write the lower triangle of ``A`` with 17 significant digits."""
    L = sp.tril(A.to_scipy(), format="coo")
    order = np.lexsort((L.row, L.col))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real symmetric\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{A.dim} {A.dim} {L.nnz}\n")
        for i, j, v in zip(L.row[order] + 1, L.col[order] + 1, L.data[order]):
            fh.write(f"{i} {j} {_FMT % v}\n")


def write_general(path, M, comment: str | None = None) -> None:
    """Write a rectangular sparse matrix (e.g. a localized basis)."""
    C = sp.coo_matrix(M)
    order = np.lexsort((C.row, C.col))
    with open(path, "w") as fh:
        fh.write("%%MatrixMarket matrix coordinate real general\n")
        if comment:
            for line in comment.splitlines():
                fh.write(f"% {line}\n")
        fh.write(f"{C.shape[0]} {C.shape[1]} {C.nnz}\n")
        for i, j, v in zip(C.row[order] + 1, C.col[order] + 1, C.data[order]):
            fh.write(f"{i} {j} {_FMT % v}\n")


def read(path):
    """Read a coordinate file; symmetric files come back as ``SparseSymMatrix``,
    general ones as ``scipy.sparse.csr_matrix``."""
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 5 or header[0] != "%%MatrixMarket" or header[2] != "coordinate":
            raise ValueError("not a Matrix Market coordinate file")
        if header[3] != "real":
            raise ValueError(f"unsupported field {header[3]!r}")
        symmetry = header[4]
        line = fh.readline()
        while line.startswith("%"):
            line = fh.readline()
        nr, nc, nnz = (int(t) for t in line.split())
        body = np.loadtxt(fh, ndmin=2) if nnz else np.zeros((0, 3))
    if body.shape[0] != nnz:
        raise ValueError(f"expected {nnz} entries, found {body.shape[0]}")
    i = body[:, 0].astype(np.int64) - 1
    j = body[:, 1].astype(np.int64) - 1
    v = body[:, 2]
    if symmetry == "symmetric":
        off = i != j
        rows = np.concatenate([i, j[off]])
        cols = np.concatenate([j, i[off]])
        vals = np.concatenate([v, v[off]])
        return SparseSymMatrix.from_coo(rows, cols, vals, nr)
    if symmetry == "general":
        return sp.coo_matrix((v, (i, j)), shape=(nr, nc)).tocsr()
    raise ValueError(f"unsupported symmetry {symmetry!r}")
