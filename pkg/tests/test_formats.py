import json

import numpy as np
import pytest
import scipy.sparse as sp

from edsolve import mmio
from edsolve.coarse import construct_phi
from edsolve.energy import Partition, assemble
from edsolve.formats import (config_hash, read_csx, read_edx, read_partition, sha256_file, write_csx,
                             write_edx, write_manifest, write_partition, write_rows_csv)
from edsolve.partition import pair_cluster
from edsolve.problems import random_energy_decomposition


def test_edx_roundtrip_exact(tmp_path):
    g = random_energy_decomposition(30, 50, seed=2)
    write_edx(tmp_path / "a.edx", g.dec)
    back = read_edx(tmp_path / "a.edx")
    assert back.m == g.dec.m
    for e in range(back.m):
        assert np.array_equal(back.support(e), g.dec.support(e))
        assert np.array_equal(back.local_matrix(e), g.dec.local_matrix(e))


def test_edx_is_stable_text(tmp_path):
    g = random_energy_decomposition(10, 5, seed=0)
    write_edx(tmp_path / "a.edx", g.dec)
    write_edx(tmp_path / "b.edx", read_edx(tmp_path / "a.edx"))
    assert (tmp_path / "a.edx").read_bytes() == (tmp_path / "b.edx").read_bytes()


@pytest.mark.parametrize("text,msg", [
    ("EDX2 3 1\n", "not an EDX1"),
    ("EDX1 3 2\n0 1 0\n1\n", "truncated"),
    ("EDX1 3 1\n0 2 0\n1 0 1\n", "expected 2 indices"),
    ("EDX1 3 1\n0 2 0 1\n1 0\n", "expected 3 values"),
    ("EDX1 3 1\n5 1 0\n1\n", "labelled"),
])
def test_edx_malformed(tmp_path, text, msg):
    p = tmp_path / "bad.edx"
    p.write_text(text)
    with pytest.raises(ValueError, match=msg):
        read_edx(p)


def test_partition_roundtrip(tmp_path):
    part = Partition([[4, 0], [1, 2, 3], [5]], 6)
    write_partition(tmp_path / "p.txt", part)
    back = read_partition(tmp_path / "p.txt", 6)
    assert [P.tolist() for P in back.patches] == [P.tolist() for P in part.patches]
    (tmp_path / "q.txt").write_text("0: 1\n2: 0\n")
    with pytest.raises(ValueError):
        read_partition(tmp_path / "q.txt")


def test_csx_roundtrip(tmp_path, geo400):
    res = pair_cluster(geo400.dec, 0.05, 50.0)
    cs = construct_phi(geo400.dec, res.partition, 1, res.phi_blocks)
    write_csx(tmp_path / "c.csx", cs)
    part, q, blocks = read_csx(tmp_path / "c.csx")
    assert q == 1
    assert len(part) == len(res.partition)
    for a, b in zip(blocks, cs.phi_blocks):
        assert np.array_equal(a, b)


def test_mtx_roundtrip(tmp_path):
    g = random_energy_decomposition(20, 30, seed=5)
    mmio.write_symmetric(tmp_path / "a.mtx", g.A, comment="test\nmatrix")
    back = mmio.read(tmp_path / "a.mtx")
    assert (back.to_scipy() != g.A.to_scipy()).nnz == 0
    M = sp.random(7, 3, density=0.5, random_state=0, format="csr")
    mmio.write_general(tmp_path / "m.mtx", M)
    assert (mmio.read(tmp_path / "m.mtx") != M).nnz == 0
    import scipy.io

    assert np.allclose(scipy.io.mmread(tmp_path / "a.mtx").toarray(), g.A.to_dense())


def test_mtx_rejects(tmp_path):
    p = tmp_path / "x.mtx"
    p.write_text("%%MatrixMarket matrix array real general\n1 1\n1\n")
    with pytest.raises(ValueError):
        mmio.read(p)
    p.write_text("%%MatrixMarket matrix coordinate real symmetric\n2 2 2\n1 1 1\n")
    with pytest.raises(ValueError, match="expected 2"):
        mmio.read(p)


def test_manifest(tmp_path):
    f = tmp_path / "t.csv"
    write_rows_csv(f, ["a", "b"], [(1, 0.1), (2, np.float64(1 / 3))])
    assert f.read_text().splitlines()[2] == "2,0.33333333333333331"
    cfg = {"eps2": 1e-3, "c": 50.0}
    path = write_manifest(tmp_path, cfg, outputs=[f], extra={"arr": np.arange(3)})
    man = json.loads(path.read_text())
    assert man["config_hash"] == config_hash(cfg)
    assert man["outputs"]["t.csv"] == sha256_file(f)
    assert man["arr"] == [0, 1, 2]
    assert config_hash({"c": 50.0, "eps2": 1e-3}) == config_hash(cfg)


def test_assembled_from_file_matches(tmp_path):
    g = random_energy_decomposition(15, 20, seed=9)
    write_edx(tmp_path / "a.edx", g.dec)
    assert np.array_equal(assemble(read_edx(tmp_path / "a.edx")).to_dense(), g.A.to_dense())
