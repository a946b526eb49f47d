"""Acceptance gate: one test and one PASS/FAIL line per criterion.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are repeated
in the terminal summary under "acceptance criteria".
"""
from __future__ import annotations

import cmath
import math
import time

import numpy as np
import pytest

from ellhecke import cli, identities
from ellhecke.elliptic import Curve
from ellhecke.operator import (
    assemble_m0,
    assemble_p1,
    build_grid,
    build_m1,
    commutator_defect,
    eigenvalues_top,
    m1_adjoint_defect,
    m1_norm_estimate,
    p1_match,
    sphere_grid,
)

from .conftest import ACCEPTANCE_LINES

TAUS = (1j, 0.3 + 1.1j, cmath.exp(1j * math.pi / 3))
TAU_OP = 0.3 + 1.1j
X, Y = 0.22 + 0.05j, 0.13 + 0.21j
T1 = 0.31 + 0.17j
TOP = 10

pytestmark = pytest.mark.slow


def report(num: int, title: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {num} ({title}): {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def top_abs(H, k=TOP):
    ev, _ = eigenvalues_top(H, None if H.shape[0] <= 4096 else k)
    return np.abs(ev[:k])


def strictly_decreasing(v):
    return all(b < a for a, b in zip(v, v[1:]))


def worst(recs):
    return max(recs, key=lambda r: r.max_residual / r.tol)


def run_checks(fn, n):
    recs = []
    for k, tau in enumerate(TAUS):
        rng = np.random.default_rng([1, k])
        recs += fn(Curve.from_tau(tau), rng, n)
    return recs


def test_criterion_1_special_functions():
    t0 = time.perf_counter()
    recs = run_checks(identities.special_function_checks, 200)
    dt = time.perf_counter() - t0
    w = worst(recs)
    ok = all(r.passed and r.tol <= 1e-9 and r.samples >= 200 for r in recs) and dt < 60
    report(1, "special functions", ok,
           f"{len(recs)} identities x 3 tau, >= 200 samples each, worst {w.max_residual:.2e} "
           f"({w.name}) vs 1e-9, {dt:.1f}s < 60s")
    assert ok


def test_criterion_2_hecke_geometry():
    t0 = time.perf_counter()
    recs = run_checks(identities.geometry_checks, 50)
    dt = time.perf_counter() - t0
    names = " ".join(r.name for r in recs)
    assert "grid + Newton oracle" in names and "commut" in names
    ok = all(r.passed for r in recs) and dt < 120
    by_name: dict = {}
    for r in recs:
        by_name[r.name] = max(by_name.get(r.name, (0.0, r.tol)), (r.max_residual, r.tol))
    detail = "; ".join(f"{k} {v[0]:.1e} < {v[1]:.0e}" for k, v in by_name.items())
    report(2, "Hecke geometry", ok, f"{len(recs)} checks over 3 tau, {dt:.1f}s < 120s; {detail}")
    assert ok


def test_criterion_3_kernel():
    recs = run_checks(identities.kernel_checks, 200)
    curve = Curve.from_tau(TAU_OP)
    slope = identities.singularity_exponent(curve)
    _, _, relerr = identities.measure_change_of_variables(curve)
    w = worst(recs)
    ok = all(r.passed for r in recs) and relerr < 1e-3 and abs(slope + 1) <= 0.01
    report(3, "kernel", ok,
           f"identities worst {w.max_residual:.2e}/{w.tol:.0e}; measure rel err {relerr:.2e} < 1e-3; "
           f"exponent {slope:.5f} in -1 +- 0.01")
    assert ok


def test_criterion_4_m0_operator():
    curve = Curve.from_tau(TAU_OP)
    sym, comm, tops, msg = [], [], [], []
    timing = None
    for N in (16, 32, 64):
        grid = build_grid(N, curve)
        t0 = time.perf_counter()
        hx = assemble_m0(X, grid, curve)
        tx = top_abs(hx.H)
        if N == 64:
            timing = time.perf_counter() - t0
        hy = assemble_m0(Y, grid, curve)
        sym.append(max(hx.selfadjoint_defect, hy.selfadjoint_defect))
        comm.append(commutator_defect(hx, hy))
        tops.append(tx)
        del hx, hy
    sym_ok = all(s < 0.5 / N for s, N in zip(sym, (16, 32, 64))) and strictly_decreasing(sym)
    comm_ok = strictly_decreasing(comm) and comm[-1] < 0.05
    changes = [np.abs(b - a) / b for a, b in zip(tops, tops[1:])]
    cauchy_ok = bool(np.all(changes[1] < changes[0]))
    gaps = []
    for N in (48, 96):
        grid = build_grid(N, curve)
        gaps.append(max(p1_match(top_abs(assemble_m0(X, grid, curve).H),
                                 top_abs(assemble_p1(X, grid, curve).H))))
    p1_ok = gaps[0] < 0.05 and gaps[1] < gaps[0]
    time_ok = timing < 300
    msg = [f"sym {', '.join(f'{s:.2e}' for s in sym)} (< 0.5/N, decreasing {sym_ok})",
           f"commutator {', '.join(f'{c:.2e}' for c in comm)} (decreasing, < 0.05: {comm_ok})",
           f"p1 gap N=48 {gaps[0]:.2e} N=96 {gaps[1]:.2e} ({p1_ok})",
           f"Cauchy max change {changes[0].max():.2e} -> {changes[1].max():.2e} ({cauchy_ok})",
           f"N=64 assembly+eigen {timing:.0f}s < 300s"]
    ok = sym_ok and comm_ok and p1_ok and cauchy_ok and time_ok
    report(4, "m=0 operator", ok, "; ".join(msg))
    assert ok


def test_criterion_5_m1_smoke():
    curve = Curve.from_tau(TAU_OP, marked_points=(0j, T1))
    grid = build_grid(16, curve)
    h0 = float(top_abs(assemble_m0(X, grid, curve).H, 1)[0])
    op = build_m1(X, grid, sphere_grid(256), T1, curve)
    adj = m1_adjoint_defect(op, seed=1)
    nrm = m1_norm_estimate(op, seed=1)
    ok = adj < 1e-2 and nrm <= h0 * 1.05
    report(5, "m=1 smoke", ok,
           f"N=16 M=256 t1={T1}: adjoint defect {adj:.2e} < 1e-2; ||H|| {nrm:.4f} <= "
           f"||H0|| {h0:.4f} x 1.05")
    assert ok


def test_criterion_6_determinism(tmp_path, monkeypatch):
    (tmp_path / "m1.json").write_text(
        '{"curve": {"tau": [0.3, 1.1], "marked_points": [[0.31, 0.17]]}, "m": 1,\n'
        ' "grid": [8], "sphere_points": 64, "hecke_points": [[0.22, 0.05]]}\n')
    runs = [["identities"],
            ["operator", "--grid", "8,16"],
            ["compare-p1", "--grid", "8,16"],
            ["spectrum", "--grid", "8,16"],
            ["operator", "--config", "../m1.json", "--out", "outm1"]]
    files = ["out/identities.json", "out/eigenvalues_m0.csv", "out/defects_m0.json",
             "out/compare_p1.json", "out/spectrum.json", "outm1/m1.json"]
    files += [f"out/cache/{k}_x{i}_N{n}.ehk1" for k in ("m0", "p1") for i in (0, 1) for n in (8, 16)]
    codes = {}
    for d in ("a", "b"):
        (tmp_path / d).mkdir()
        monkeypatch.chdir(tmp_path / d)
        for argv in runs:
            args = argv if "--out" in argv else argv + ["--out", "out"]
            codes.setdefault(d, []).append(cli.main(args + ["-q"]))
    same = [f for f in files if (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()]
    ok = len(same) == len(files) and codes["a"] == codes["b"]
    report(6, "determinism", ok,
           f"{len(same)}/{len(files)} report and cache files byte-identical across two runs "
           f"of {len(runs)} commands; exit codes {codes['a']}")
    assert ok
