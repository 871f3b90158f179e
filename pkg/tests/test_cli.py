import csv
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from edsolve.cli import EXIT_BOUND, EXIT_OK, main


@pytest.fixture(scope="module")
def problem(tmp_path_factory):
    d = tmp_path_factory.mktemp("geo")
    assert main(["generate", "--kind", "geometric", "--n", "400", "--seed", "1", "--out", str(d)]) == EXIT_OK
    return d


def rows(path):
    with open(path) as fh:
        return list(csv.reader(fh))


@pytest.mark.parametrize("kind,extra", [
    ("geometric", ["--n", "100"]), ("knn", ["--n", "100"]), ("roll", ["--n", "100"]),
    ("fd5", ["--nx", "6", "--ny", "5"]), ("fem", ["--nx", "5", "--ny", "5"]),
])
def test_generate_kinds(tmp_path, kind, extra):
    assert main(["generate", "--kind", kind, *extra, "--out", str(tmp_path)]) == EXIT_OK
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert set(man["outputs"]) >= {"problem.edx", "A.mtx"}
    assert man["config"]["kind"] == kind


def test_partition_and_reruns_identical(problem, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["partition", "--input", str(problem), "--eps2", "1e-2", "--out", str(d)]) == EXIT_OK
    for name in ("partition.txt", "measurements.csv", "summary.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    summary = rows(a / "summary.csv")
    assert summary[0] == ["patches", "eps2", "delta", "kappa_bound", "max_delta_eps2"]
    assert float(summary[1][1]) <= 1e-2


def test_regular_partition_needs_coords(problem, tmp_path):
    assert main(["partition", "--input", str(problem), "--regular", "4", "--out", str(tmp_path)]) == EXIT_OK
    assert len(rows(tmp_path / "measurements.csv")) == 17
    bare = tmp_path / "bare"
    bare.mkdir()
    shutil.copy(problem / "problem.edx", bare / "problem.edx")
    with pytest.raises(SystemExit):
        main(["partition", "--input", str(bare), "--regular", "4", "--out", str(tmp_path / "o")])


def test_compress_and_localize(problem, tmp_path):
    assert main(["compress", "--input", str(problem), "--eps2", "1e-2", "--pca", "--out", str(tmp_path)]) == EXIT_OK
    rep = rows(tmp_path / "report.csv")
    assert len(rep) == 2
    assert main(["localize", "--input", str(problem), "--eps2", "1e-2", "--out", str(tmp_path / "l")]) == EXIT_OK
    assert rows(tmp_path / "l" / "radii.csv")[0][:2] == ["column", "radius"]


def test_mmd_solve_report(problem, tmp_path):
    h = tmp_path / "h"
    assert main(["mmd", "--input", str(problem), "--schedule", "1e-3,1e-2", "--out", str(h)]) == EXIT_OK
    assert (h / "level1" / "psi.mtx").exists() and (h / "level2" / "reduced.edx").exists()
    s = tmp_path / "s"
    assert main(["solve", "--hierarchy", str(h), "--comp-tol", "1e-8", "--out", str(s)]) == EXIT_OK
    x = np.loadtxt(s / "x.txt")
    assert x.shape == (400,)
    it = rows(s / "iterations.csv")
    assert [r[0] for r in it[1:]] == ["B1", "B2", "A2", "A"]
    assert main(["report", "--hierarchy", str(h)]) == EXIT_OK
    assert len(rows(h / "kappa.csv")) == 3


def test_mmd_no_compression_exit(problem, tmp_path):
    assert main(["mmd", "--input", str(problem), "--schedule", "1e-12", "--out", str(tmp_path)]) == EXIT_BOUND


def test_verify_exit_code(capsys):
    assert main(["verify", "--suite", "energy"]) == EXIT_OK
    out = capsys.readouterr().out
    assert out.count("PASS") >= 3 and "FAIL" not in out


def test_console_script_threads_env(problem, tmp_path):
    env = {"EDSOLVE_THREADS": "2", "PATH": "/usr/bin:/bin"}
    r = subprocess.run([sys.executable, "-m", "edsolve.cli", "partition", "--input", str(problem),
                        "--eps2", "1e-2", "--out", str(tmp_path)], capture_output=True, text=True, env=env)
    assert r.returncode == 0, r.stderr
    assert "patches=" in r.stdout


def test_bad_command():
    with pytest.raises(SystemExit):
        main(["nope"])
