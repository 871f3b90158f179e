"""``edsolve`` command line: generate problems, build partitions, compressions
and hierarchies, solve, verify bounds and tabulate results.

Every command that writes a directory also writes ``manifest.json`` with the
run configuration, its hash and the hashes of inputs and outputs.  Timings go
into the manifest only, so CSVs are reproducible byte for byte.

Exit codes: 0 success, 2 a checked bound failed, 3 a solver did not converge.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from threadpoolctl import threadpool_limits

from . import __version__, formats, mmio
from .coarse import compression_error, construct_phi, exact_psi, stiffness_condition_report
from .energy import assemble
from .linalg import sym_extremes
from .localize import construct_tilde_psi
from .measurements import partition_measurements
from .mmd import MMDConfig, NoCompressionError, kappa_bounds, mmd_decompose, mmd_solve
from .partition import pair_cluster, regular_partition
from .problems import GENERATORS, default_contrast_field
from .verify import SUITES, run_suite

EXIT_OK, EXIT_BOUND, EXIT_NOCONV = 0, 2, 3


def _threads(args) -> int:
    if getattr(args, "threads", None):
        return int(args.threads)
    return int(os.environ.get("EDSOLVE_THREADS", "1"))


def _outdir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _config(args) -> dict:
    skip = {"func", "command"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _edx_path(path) -> Path:
    path = Path(path)
    return path / "problem.edx" if path.is_dir() else path


def _load_problem(path):
    dec = formats.read_edx(_edx_path(path))
    return dec, assemble(dec)


def _load_coords(path):
    p = Path(path)
    p = (p if p.is_dir() else p.parent) / "coords.csv"
    if not p.exists():
        return None
    return np.loadtxt(p, delimiter=",", skiprows=1, ndmin=2)


def _schedule(text) -> list:
    return [float(t) for t in text.split(",") if t.strip()]


def cmd_generate(args) -> int:
    d = _outdir(args.out)
    kind = args.kind
    if kind == "geometric":
        g = GENERATORS[kind](args.n, args.d, args.eta, args.seed)
    elif kind == "knn":
        g = GENERATORS[kind](args.n, args.seed, args.k_inner, args.k_outer)
    elif kind == "roll":
        g = GENERATORS[kind](args.n, args.a, args.eta, args.seed)
    elif kind == "fd5":
        g = GENERATORS[kind](args.nx, args.ny, default_contrast_field(args.contrast))
    else:
        g = GENERATORS[kind](args.nx, args.ny, seed=args.seed)
    outs = [d / "problem.edx", d / "A.mtx"]
    formats.write_edx(outs[0], g.dec)
    mmio.write_symmetric(outs[1], g.A)
    if g.coords is not None:
        outs.append(d / "coords.csv")
        dims = ["x", "y", "z"][: g.coords.shape[1]]
        np.savetxt(outs[-1], g.coords, delimiter=",", header=",".join(dims), comments="", fmt="%.17g")
    formats.write_manifest(d, _config(args), outputs=outs,
                           extra={"n": g.dec.n, "elements": g.dec.m, "nnz": g.A.nnz, "meta": g.meta})
    print(f"n={g.dec.n} elements={g.dec.m} nnz={g.A.nnz} -> {d}")
    return EXIT_OK


def cmd_partition(args) -> int:
    dec, A = _load_problem(args.input)
    d = _outdir(args.out)
    t0 = time.perf_counter()
    if args.regular:
        coords = _load_coords(args.input)
        if coords is None:
            raise SystemExit("--regular needs coords.csv next to the problem")
        part = regular_partition(coords, args.regular)
    else:
        part = pair_cluster(dec, np.sqrt(args.eps2), args.c, args.q, args.size_weighted).partition
    elapsed = time.perf_counter() - t0
    pm = partition_measurements(dec, part, args.q, with_alpha=args.alpha)
    lam_min = sym_extremes(A)[0]
    max_prod = pm.max_delta_eps2()
    outs = [d / "partition.txt", d / "measurements.csv", d / "summary.csv"]
    formats.write_partition(outs[0], part)
    formats.write_measurements_csv(outs[1], pm.patches, args.q)
    formats.write_rows_csv(outs[2], ["patches", "eps2", "delta", "kappa_bound", "max_delta_eps2"],
                           [(len(part), float(pm.eps**2), float(pm.delta), float(pm.delta / lam_min),
                             float(max_prod))])
    formats.write_manifest(d, _config(args), inputs=[_edx_path(args.input)], outputs=outs, extra={"seconds": elapsed})
    print(f"patches={len(part)} eps2={pm.eps**2:.4g} delta={pm.delta:.4g} max_delta_eps2={max_prod:.4g}")
    if not args.regular and (pm.eps**2 > args.eps2 * (1 + 1e-10) or max_prod > args.c * (1 + 1e-10)):
        return EXIT_BOUND
    return EXIT_OK


def _pca_count(A, err: float) -> int:
    """Smallest rank whose optimal approximation of ``A^{-1}`` has error at most ``err``."""
    lam = np.linalg.eigvalsh(A.to_dense())
    return int(np.sum(1.0 / lam > err))


def cmd_compress(args) -> int:
    dec, A = _load_problem(args.input)
    d = _outdir(args.out)
    eps = np.sqrt(args.eps2)
    res = pair_cluster(dec, eps, args.c, args.q)
    coarse = construct_phi(dec, res.partition, args.q, res.phi_blocks, res.eps)
    if args.exact:
        comp = exact_psi(A, coarse)
        infl = None
    else:
        eps_loc = args.eps_loc if args.eps_loc else eps
        basis = construct_tilde_psi(A, dec, coarse, eps_loc, threads=_threads(args))
        comp = basis.compressed(A)
        infl = eps_loc * np.sqrt(coarse.N)
    method = "dense" if A.dim <= 4000 else "power"
    err = compression_error(A, comp, method=method)
    rep = stiffness_condition_report(A, comp, res.condition_factor, infl)
    e2 = res.error_factor**2
    row = [A.dim, coarse.N, float(e2), float(err), float(err / e2), float(rep["kappa"]), float(rep["bound"])]
    header = ["n", "N", "eps2", "compression_error", "ratio", "kappa", "kappa_bound"]
    if args.pca:
        n_pca = _pca_count(A, err)
        header += ["N_pca", "N_over_N_pca"]
        row += [n_pca, float(coarse.N / max(n_pca, 1))]
    outs = [d / "coarse.csx", d / "psi.mtx", d / "report.csv"]
    formats.write_csx(outs[0], coarse)
    mmio.write_general(outs[1], sp.csc_matrix(comp.Psi))
    formats.write_rows_csv(outs[2], header, [row])
    formats.write_manifest(d, _config(args), inputs=[_edx_path(args.input)], outputs=outs)
    print(" ".join(f"{h}={v:.4g}" if isinstance(v, float) else f"{h}={v}" for h, v in zip(header, row)))
    bad = err > e2 * (1 + 1e-8) if args.exact else False
    bad |= bool(rep["violates_kappa"])
    return EXIT_BOUND if bad else EXIT_OK


def cmd_localize(args) -> int:
    dec, A = _load_problem(args.input)
    d = _outdir(args.out)
    eps = np.sqrt(args.eps2)
    res = pair_cluster(dec, eps, args.c, args.q)
    coarse = construct_phi(dec, res.partition, args.q, res.phi_blocks, res.eps)
    basis = construct_tilde_psi(A, dec, coarse, args.eps_loc or eps, threads=_threads(args))
    outs = [d / "psi.mtx", d / "radii.csv"]
    mmio.write_general(outs[0], basis.Psi)
    formats.write_radii_csv(outs[1], basis)
    formats.write_manifest(d, _config(args), inputs=[_edx_path(args.input)], outputs=outs)
    r = basis.radii
    print(f"N={coarse.N} radius_mean={r.mean():.3g} radius_max={r.max()} flagged={basis.flagged}")
    return EXIT_OK


def cmd_mmd(args) -> int:
    dec, A = _load_problem(args.input)
    cfg = MMDConfig(_schedule(args.schedule), c=args.c, q=args.q, loc_mode=args.loc_mode,
                    threads=_threads(args))
    t0 = time.perf_counter()
    try:
        h = mmd_decompose(dec, cfg, A)
    except NoCompressionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BOUND
    elapsed = time.perf_counter() - t0
    d = _outdir(args.out)
    config = {"eps2_schedule": cfg.eps2_schedule, "c": cfg.c, "q": cfg.q, "loc_mode": cfg.loc_mode,
              "input": str(args.input)}
    formats.save_hierarchy(d, h, config, with_reduced=not args.no_reduced)
    table = d / "table.csv"
    formats.write_rows_csv(table, ["operator", "size", "nnz", "condition", "complexity"], h.table())
    man = json.loads((d / "manifest.json").read_text())
    man["outputs"]["table.csv"] = formats.sha256_file(table)
    man["seconds"] = elapsed
    (d / "manifest.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")
    for r in h.table():
        print(f"{r[0]:>4} size={r[1]} nnz={r[2]} cond={r[3]:.4g} complexity={r[4]:.4g}")
    return EXIT_OK


def _rhs(kind: str, A, coords, seed: int):
    if kind == "random":
        return np.random.default_rng(seed).standard_normal(A.dim), None
    if kind == "ones":
        return np.ones(A.dim), None
    if kind == "case2":
        if coords is None or coords.shape[1] < 3:
            raise SystemExit("case2 needs 3-D coords.csv next to the problem")
        u = coords[:, 0] + coords[:, 1] + np.sin(coords[:, 2])
        return A @ u, u
    return np.loadtxt(kind), None


def cmd_solve(args) -> int:
    from .formats import load_hierarchy

    h = load_hierarchy(args.hierarchy)
    A = h.levels[0].A_prev if h.levels else h.bottom
    coords = _load_coords(args.coords) if args.coords else None
    b, u = _rhs(args.rhs, A, coords, args.seed)
    res = mmd_solve(h, b, level_tol=args.level_tol, compensate=not args.no_compensate,
                    comp_tol=args.comp_tol, comp_norm=args.comp_norm)
    d = _outdir(args.out)
    outs = [d / "x.txt", d / "iterations.csv"]
    np.savetxt(outs[0], res.x, fmt="%.17g")
    rows = [(f"B{lev.level}", lev.N_prev - lev.N, it) for lev, it in zip(h.levels, res.level_iterations)]
    rows.append((f"A{h.K}", h.bottom.dim, res.bottom_iterations))
    rows.append(("A", A.dim, res.compensation_iterations))
    formats.write_rows_csv(outs[1], ["operator", "size", "iterations"], rows)
    extra = {}
    if u is not None:
        e = res.x - u
        extra["relative_energy_error"] = float(np.sqrt(e @ (A @ e)) / np.linalg.norm(b))
    formats.write_manifest(d, _config(args), outputs=outs, extra=extra)
    for r in rows:
        print(f"{r[0]:>4} size={r[1]} iterations={r[2]}")
    if extra:
        print(f"||x-u*||_A/||b|| = {extra['relative_energy_error']:.3e}")
    return EXIT_OK if res.compensation_converged else EXIT_NOCONV


def cmd_verify(args) -> int:
    kwargs = {"seed": args.seed}
    if args.n:
        kwargs["n"] = args.n
    checks = run_suite(args.suite, **kwargs)
    for c in checks:
        print(c.line())
    return EXIT_OK if all(c.passed for c in checks) else EXIT_BOUND


def cmd_report(args) -> int:
    from .formats import load_hierarchy

    h = load_hierarchy(args.hierarchy)
    rows = []
    bad = False
    for kb in kappa_bounds(h):
        rows.append((kb["level"], float(kb["eps"]), float(kb["kappa"]), float(kb["bound"])))
        bad |= kb["kappa"] > kb["bound"] * (1 + 1e-6)
    out = Path(args.hierarchy) / "kappa.csv"
    formats.write_rows_csv(out, ["level", "eps", "kappa", "kappa_bound"], rows)
    for r in rows:
        print(f"level {r[0]}: kappa={r[2]:.4g} bound={r[3]:.4g}")
    return EXIT_BOUND if bad else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edsolve", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"edsolve {__version__}")
    p.add_argument("--threads", type=int, default=None, help="worker cap (default EDSOLVE_THREADS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a test problem")
    g.add_argument("--kind", choices=sorted(GENERATORS), required=True)
    g.add_argument("--n", type=int, default=2000)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--eta", type=float, default=2.5)
    g.add_argument("--a", type=float, default=0.1)
    g.add_argument("--k-inner", type=int, default=15)
    g.add_argument("--k-outer", type=int, default=5)
    g.add_argument("--nx", type=int, default=50)
    g.add_argument("--ny", type=int, default=50)
    g.add_argument("--contrast", type=float, default=1e3)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_generate)

    def common(sp_, eps2=1e-3):
        sp_.add_argument("--input", required=True, help="problem directory or .edx file")
        sp_.add_argument("--eps2", type=float, default=eps2)
        sp_.add_argument("--c", type=float, default=50.0)
        sp_.add_argument("--q", type=int, default=1)
        sp_.add_argument("--out", required=True)

    pa = sub.add_parser("partition", help="adaptive or regular partition with measurements")
    common(pa)
    pa.add_argument("--regular", type=int, default=0, metavar="S", help="S x S grid partition baseline")
    pa.add_argument("--size-weighted", action="store_true")
    pa.add_argument("--alpha", action="store_true", help="also measure the decay factor")
    pa.set_defaults(func=cmd_partition)

    co = sub.add_parser("compress", help="compressed operator with error and condition report")
    common(co)
    co.add_argument("--eps-loc", type=float, default=None)
    co.add_argument("--exact", action="store_true", help="use the exact (global) basis")
    co.add_argument("--pca", action="store_true", help="compare with the optimal rank")
    co.set_defaults(func=cmd_compress)

    lo = sub.add_parser("localize", help="localized basis and support radii")
    common(lo)
    lo.add_argument("--eps-loc", type=float, default=None)
    lo.set_defaults(func=cmd_localize)

    m = sub.add_parser("mmd", help="multilevel decomposition")
    m.add_argument("--input", required=True)
    m.add_argument("--schedule", default="1e-5,1e-4,1e-3", help="comma-separated eps^2 per level")
    m.add_argument("--c", type=float, default=50.0)
    m.add_argument("--q", type=int, default=1)
    m.add_argument("--loc-mode", choices=["relaxed", "strict"], default="relaxed")
    m.add_argument("--no-reduced", action="store_true", help="skip reduced decompositions")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mmd)

    s = sub.add_parser("solve", help="solve with a saved hierarchy")
    s.add_argument("--hierarchy", required=True)
    s.add_argument("--rhs", default="random", help="random, ones, case2 or a text file")
    s.add_argument("--coords", default=None, help="problem directory holding coords.csv")
    s.add_argument("--level-tol", type=float, default=1e-6)
    s.add_argument("--comp-tol", type=float, default=1e-5)
    s.add_argument("--comp-norm", choices=["energy", "residual"], default="energy")
    s.add_argument("--no-compensate", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_solve)

    v = sub.add_parser("verify", help="run bound checks")
    v.add_argument("--suite", choices=sorted(SUITES) + ["all"], default="all")
    v.add_argument("--n", type=int, default=None)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="condition numbers of a saved hierarchy against their bounds")
    r.add_argument("--hierarchy", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with threadpool_limits(limits=_threads(args)):
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
