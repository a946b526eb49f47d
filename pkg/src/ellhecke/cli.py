"""Command line: identity suite, operator caches, spectra and the wp-plane comparison.

Configuration is a UTF-8 JSON file (see README for the schema).  Every
command writes deterministic, sorted JSON/CSV under the output directory, and
its exit code is 0 when all checks pass, 2 on a numerical check failure and 3
on a configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import re
import sys
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import identities
from .elliptic import Curve
from .errors import ConfigError, EllHeckeError, ParameterError
from .operator import (
    CODE_VERSION,
    FULL_EIGH_MAX,
    OperatorMatrix,
    assemble_m0,
    assemble_p1,
    build_grid,
    build_m1,
    check_hecke_point,
    commutator_defect,
    eigenvalues_top,
    m1_adjoint_defect,
    m1_norm_estimate,
    p1_match,
    read_cache,
    read_cache_meta,
    sphere_grid,
    write_cache,
)

log = logging.getLogger("ellhecke")

EXIT_OK = 0
EXIT_NUMERICAL = 2
EXIT_CONFIG = 3

# m = 1 is smoke scale only
M1_MAX_N = 24
M1_MAX_M = 512


@dataclass(frozen=True)
class Tolerances:
    identity: float = 1e-9          # base tolerance of the identity suite
    symmetry_c: float = 0.5         # selfadjoint defect < symmetry_c / N
    commutator: float = 0.05
    p1_threshold: float = 0.05      # index-wise m0 vs wp-plane gap
    adjoint: float = 1e-2           # m = 1 pairing defect
    norm_slack: float = 0.05        # ||H|| <= ||H0|| (1 + norm_slack)


@dataclass(frozen=True)
class RunConfig:
    tau: complex = 0.3 + 1.1j
    marked_points: tuple = ()       # t1, ... (t0 = 0 is implicit)
    hecke_points: tuple = (0.22 + 0.05j, 0.13 + 0.21j)
    grid: tuple = (16, 32, 64)
    m: int = 0
    tolerances: Tolerances = field(default_factory=Tolerances)
    output_dir: str = "out"
    seed: int = 1
    identity_taus: tuple = identities.TAUS
    top_k: int = 10
    sphere_points: int = 256

    def curve(self) -> Curve:
        return Curve.from_tau(self.tau, marked_points=(0j,) + tuple(self.marked_points))

    def to_dict(self) -> dict:
        """The config in the input file schema, so reports can be fed back in."""
        d = asdict(self)
        d["curve"] = {"tau": _cjson(d.pop("tau")),
                      "marked_points": [_cjson(z) for z in d.pop("marked_points")]}
        for key in ("hecke_points", "identity_taus"):
            d[key] = [_cjson(z) for z in d[key]]
        d["grid"] = list(d["grid"])
        return d


# ---------------------------------------------------------------------------
# config parsing


def _cjson(z) -> list[float]:
    z = complex(z)
    return [z.real, z.imag]


def _field_line(text: str, name: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(name), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text: str, path: str) -> str:
    line = _field_line(text, path.split(".")[-1].split("[")[0]) if text else None
    return f"line {line}, field {path}" if line else f"field {path}"


def _complex(value, path: str, text: str) -> complex:
    try:
        if isinstance(value, (list, tuple)) and len(value) == 2:
            z = complex(float(value[0]), float(value[1]))
        elif isinstance(value, str):
            z = complex(value.replace(" ", "").replace("i", "j"))
        elif isinstance(value, (int, float)) and not isinstance(value, bool):
            z = complex(value)
        else:
            raise ValueError
    except (TypeError, ValueError):
        raise ConfigError(f"{_where(text, path)}: expected a complex number "
                          f"([re, im] or \"re+imj\"), got {value!r}") from None
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise ConfigError(f"{_where(text, path)}: complex value must be finite")
    return z


def _int(value, path: str, text: str, lo: int) -> int:
    if isinstance(value, bool) or not isinstance(value, int) or value < lo:
        raise ConfigError(f"{_where(text, path)}: expected an integer >= {lo}, got {value!r}")
    return value


def _number(value, path: str, text: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not value >= 0 \
            or not math.isfinite(value):
        raise ConfigError(f"{_where(text, path)}: expected a finite number >= 0, got {value!r}")
    return float(value)


def _list(value, path: str, text: str) -> list:
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{_where(text, path)}: expected a non-empty list")
    return value


def parse_config(raw: dict, text: str = "") -> RunConfig:
    """Validate a decoded config mapping; every check runs before any math."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a JSON object")
    known = ({f.name for f in fields(RunConfig)} - {"tau", "marked_points"}) | {"curve"}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{_where(text, unknown[0])}: unknown field")
    kw = {}
    curve = raw.get("curve", {})
    if not isinstance(curve, dict):
        raise ConfigError(f"{_where(text, 'curve')}: expected an object with tau, marked_points")
    bad = sorted(set(curve) - {"tau", "marked_points"})
    if bad:
        raise ConfigError(f"{_where(text, 'curve.' + bad[0])}: unknown field")
    if "tau" in curve:
        kw["tau"] = _complex(curve["tau"], "curve.tau", text)
    if "marked_points" in curve:
        mp = curve["marked_points"]
        if not isinstance(mp, list):
            raise ConfigError(f"{_where(text, 'curve.marked_points')}: expected a list")
        kw["marked_points"] = tuple(_complex(z, f"curve.marked_points[{i}]", text)
                                    for i, z in enumerate(mp))
    if "hecke_points" in raw:
        kw["hecke_points"] = tuple(_complex(z, f"hecke_points[{i}]", text)
                                   for i, z in enumerate(_list(raw["hecke_points"], "hecke_points", text)))
    if "grid" in raw:
        kw["grid"] = tuple(_int(n, f"grid[{i}]", text, 8)
                           for i, n in enumerate(_list(raw["grid"], "grid", text)))
    if "m" in raw:
        kw["m"] = _int(raw["m"], "m", text, 0)
    if "tolerances" in raw:
        tol = raw["tolerances"]
        if not isinstance(tol, dict):
            raise ConfigError(f"{_where(text, 'tolerances')}: expected an object")
        names = {f.name for f in fields(Tolerances)}
        bad = sorted(set(tol) - names)
        if bad:
            raise ConfigError(f"{_where(text, 'tolerances.' + bad[0])}: unknown tolerance")
        kw["tolerances"] = Tolerances(**{k: _number(v, f"tolerances.{k}", text) for k, v in tol.items()})
    if "output_dir" in raw:
        if not isinstance(raw["output_dir"], str) or not raw["output_dir"]:
            raise ConfigError(f"{_where(text, 'output_dir')}: expected a non-empty string")
        kw["output_dir"] = raw["output_dir"]
    if "seed" in raw:
        kw["seed"] = _int(raw["seed"], "seed", text, 0)
    if "identity_taus" in raw:
        kw["identity_taus"] = tuple(_complex(z, f"identity_taus[{i}]", text)
                                    for i, z in enumerate(_list(raw["identity_taus"], "identity_taus", text)))
    if "top_k" in raw:
        kw["top_k"] = _int(raw["top_k"], "top_k", text, 1)
    if "sphere_points" in raw:
        kw["sphere_points"] = _int(raw["sphere_points"], "sphere_points", text, 4)
    return validate(RunConfig(**kw), text)


def validate(cfg: RunConfig, text: str = "") -> RunConfig:
    for path, tau in [("curve.tau", cfg.tau)] + [(f"identity_taus[{i}]", t)
                                                  for i, t in enumerate(cfg.identity_taus)]:
        if not complex(tau).imag > 0:
            raise ConfigError(f"{_where(text, path)}: Im tau must be > 0, got {complex(tau)!r}")
    if cfg.m not in (0, 1):
        raise ConfigError(f"{_where(text, 'm')}: m must be 0 or 1 (m >= 2 is out of scope)")
    if cfg.m != len(cfg.marked_points):
        raise ConfigError(f"{_where(text, 'm')}: m = {cfg.m} but {len(cfg.marked_points)} "
                          "marked points besides t0 = 0 are given")
    if cfg.m == 1:
        if max(cfg.grid) > M1_MAX_N:
            raise ConfigError(f"{_where(text, 'grid')}: m = 1 runs at N <= {M1_MAX_N}")
        if cfg.sphere_points > M1_MAX_M:
            raise ConfigError(f"{_where(text, 'sphere_points')}: m = 1 runs at M <= {M1_MAX_M}")
    if len(set(cfg.grid)) != len(cfg.grid) or list(cfg.grid) != sorted(cfg.grid):
        raise ConfigError(f"{_where(text, 'grid')}: N values must be strictly increasing")
    curve = cfg.curve()
    for i, x in enumerate(cfg.hecke_points):
        try:
            check_hecke_point(x, curve)
        except ParameterError as exc:
            raise ConfigError(f"{_where(text, f'hecke_points[{i}]')}: {exc}") from None
    return cfg


def load_config(path: str | None) -> RunConfig:
    if path is None:
        return validate(RunConfig())
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except (OSError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: cannot read config: {exc}") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    try:
        return parse_config(raw, text)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _parse_grid_flag(s: str) -> tuple:
    try:
        return tuple(int(v) for v in s.split(","))
    except ValueError:
        raise ConfigError(f"--grid: expected N[,N...], got {s!r}") from None


def _parse_x_flag(s: str) -> tuple:
    out = []
    for part in s.split(";"):
        try:
            re_, im_ = part.split(",")
            out.append(complex(float(re_), float(im_)))
        except ValueError:
            raise ConfigError(f"--hecke-x: expected RE,IM[;RE,IM...], got {s!r}") from None
    return tuple(out)


def config_from_args(args) -> RunConfig:
    cfg = load_config(args.config)
    over = {}
    if args.out is not None:
        over["output_dir"] = args.out
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be >= 0")
        over["seed"] = args.seed
    if args.grid is not None:
        grid = _parse_grid_flag(args.grid)
        if any(n < 8 for n in grid):
            raise ConfigError("--grid: every N must be >= 8")
        over["grid"] = grid
    if args.hecke_x is not None:
        over["hecke_points"] = _parse_x_flag(args.hecke_x)
    return validate(replace(cfg, **over)) if over else cfg


# ---------------------------------------------------------------------------
# output helpers


def _dump_json(path: str, obj) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(obj, sort_keys=True, indent=2, allow_nan=True))
        fh.write("\n")


def _xstr(x: complex) -> str:
    return f"{x.real!r}{'+' if x.imag >= 0 else '-'}{abs(x.imag)!r}j"


def _check(value: float, tol: float, passed: bool | None = None) -> dict:
    return {"value": float(value), "tol": float(tol),
            "passed": bool(value < tol) if passed is None else bool(passed)}


def _strictly_decreasing(vals) -> bool:
    return all(b < a for a, b in zip(vals, vals[1:]))


def _cache_path(cfg: RunConfig, kind: str, ix: int, N: int) -> str:
    return os.path.join(cfg.output_dir, "cache", f"{kind}_x{ix}_N{N}.ehk1")


def _expected_meta(cfg: RunConfig, kind: str, x: complex, N: int) -> dict:
    return {"code_version": CODE_VERSION, "kind": kind, "x": _cjson(x), "N": N,
            "tau": _cjson(cfg.tau), "symmetrized": True}


def _meta_matches(meta: dict | None, want: dict) -> bool:
    return meta is not None and all(meta.get(k) == v for k, v in want.items())


def _operator(cfg: RunConfig, kind: str, ix: int, N: int, build: bool = True) -> OperatorMatrix | None:
    """Cached operator for (kind, x index, N): reused when the metadata matches,
    rebuilt (with a warning) when it does not, None if absent and build=False."""
    x = cfg.hecke_points[ix]
    path = _cache_path(cfg, kind, ix, N)
    want = _expected_meta(cfg, kind, x, N)
    meta = read_cache_meta(path)
    if _meta_matches(meta, want):
        log.info("reusing %s", path)
        return read_cache(path)
    if meta is not None or os.path.exists(path):
        log.warning("cache %s does not match the configuration; recomputing", path)
    if not build:
        return None
    curve = cfg.curve()
    grid = build_grid(N, curve)
    t0 = time.perf_counter()
    op = (assemble_m0 if kind == "m0" else assemble_p1)(x, grid, curve)
    log.info("assembled %s x=%s N=%d in %.1fs", kind, _xstr(x), N, time.perf_counter() - t0)
    os.makedirs(os.path.dirname(path), exist_ok=True)
    write_cache(path, op)
    return op


def _missing(cfg: RunConfig, kind: str) -> list[str]:
    return [_cache_path(cfg, kind, ix, N) for ix in range(len(cfg.hecke_points)) for N in cfg.grid
            if not _meta_matches(read_cache_meta(_cache_path(cfg, kind, ix, N)),
                                 _expected_meta(cfg, kind, cfg.hecke_points[ix], N))]


def _need_m0(cfg: RunConfig, args_hint: str) -> int | None:
    missing = _missing(cfg, "m0")
    if missing:
        log.error("missing or stale m0 operator data (%s); run `ellhecke operator%s` first",
                  ", ".join(missing), args_hint)
        return EXIT_CONFIG
    return None


def _top(H: np.ndarray, k: int) -> np.ndarray:
    ev, _ = eigenvalues_top(H, None if H.shape[0] <= FULL_EIGH_MAX else k)
    return ev[:k]


# ---------------------------------------------------------------------------
# commands


def cmd_identities(cfg: RunConfig) -> int:
    scale = cfg.tolerances.identity / identities.BASE_TOL
    t0 = time.perf_counter()
    recs = identities.run_suite(cfg.seed, cfg.identity_taus, cfg.tolerances.identity)
    for tau in cfg.identity_taus:
        curve = Curve.from_tau(tau)
        tag = f" [tau={complex(tau).real:.4g}{complex(tau).imag:+.4g}i]"
        slope = identities.singularity_exponent(curve)
        recs.append(identities.IdentityRecord(
            "kernel singularity exponent: |slope + 1|" + tag, 1, abs(slope + 1), 0.01 * scale,
            abs(slope + 1) < 0.01 * scale))
        qa, va, err = identities.measure_change_of_variables(curve)
        recs.append(identities.IdentityRecord(
            "measure change of variables, v-form vs q-form" + tag, 1, err, 1e-3 * scale,
            err < 1e-3 * scale))
    log.info("identity suite: %d records in %.1fs", len(recs), time.perf_counter() - t0)
    ok = all(r.passed for r in recs)
    for r in recs:
        if not r.passed:
            log.error("FAILED %s: residual %.3e >= tol %.1e", r.name, r.max_residual, r.tol)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "identities.json"),
               {"command": "identities", "code_version": CODE_VERSION, "config": cfg.to_dict(),
                "records": [r.to_dict() for r in recs], "passed": ok})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_operator(cfg: RunConfig) -> int:
    if cfg.m == 1:
        return _cmd_operator_m1(cfg)
    tol = cfg.tolerances
    ops: dict = {}
    rows, records = [], []
    for ix, x in enumerate(cfg.hecke_points):
        for N in cfg.grid:
            op = _operator(cfg, "m0", ix, N)
            ops[ix, N] = op
            ev, _ = eigenvalues_top(op.H, None if op.n <= FULL_EIGH_MAX else cfg.top_k)
            rows += [(i, repr(float(v)), N, _xstr(x)) for i, v in enumerate(ev)]
            records.append({"x": _cjson(x), "N": N, "nodes": op.n,
                            "cache": os.path.relpath(_cache_path(cfg, "m0", ix, N), cfg.output_dir),
                            "selfadjoint_defect": _check(op.selfadjoint_defect, tol.symmetry_c / N)})
        # drop the big matrices of this x unless a commutator still needs them
        if len(cfg.hecke_points) == 1:
            ops.clear()

    ok = all(r["selfadjoint_defect"]["passed"] for r in records)
    trends = {"selfadjoint_defect": []}
    for ix, x in enumerate(cfg.hecke_points):
        vals = [r["selfadjoint_defect"]["value"] for r in records if r["x"] == _cjson(x)]
        dec = _strictly_decreasing(vals)
        ok &= dec
        trends["selfadjoint_defect"].append({"x": _cjson(x), "N": list(cfg.grid), "values": vals,
                                             "strictly_decreasing": dec})

    comms = []
    if len(cfg.hecke_points) > 1:
        trends["commutator_defect"] = []
        for i in range(len(cfg.hecke_points)):
            for j in range(i + 1, len(cfg.hecke_points)):
                vals = []
                for N in cfg.grid:
                    c = commutator_defect(ops[i, N], ops[j, N])
                    vals.append(c)
                    comms.append({"x": _cjson(cfg.hecke_points[i]), "y": _cjson(cfg.hecke_points[j]),
                                  "N": N, "commutator_defect": _check(c, tol.commutator)})
                dec = _strictly_decreasing(vals)
                ok &= dec and vals[-1] < tol.commutator
                trends["commutator_defect"].append(
                    {"x": _cjson(cfg.hecke_points[i]), "y": _cjson(cfg.hecke_points[j]),
                     "N": list(cfg.grid), "values": vals, "strictly_decreasing": dec})
    ops.clear()

    os.makedirs(cfg.output_dir, exist_ok=True)
    buf = io.StringIO(newline="")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("index", "eigenvalue", "N", "x"))
    w.writerows(rows)
    with open(os.path.join(cfg.output_dir, "eigenvalues_m0.csv"), "w", encoding="utf-8",
              newline="") as fh:
        fh.write(buf.getvalue())
    _dump_json(os.path.join(cfg.output_dir, "defects_m0.json"),
               {"command": "operator", "code_version": CODE_VERSION, "config": cfg.to_dict(),
                "operators": records, "commutators": comms, "trends": trends, "passed": bool(ok)})
    return EXIT_OK if ok else EXIT_NUMERICAL


def _cmd_operator_m1(cfg: RunConfig) -> int:
    tol = cfg.tolerances
    curve = cfg.curve()
    t1 = cfg.marked_points[0]
    sphere = sphere_grid(cfg.sphere_points)
    records, ok = [], True
    for x in cfg.hecke_points:
        for N in cfg.grid:
            grid = build_grid(N, curve)
            h0 = float(abs(eigenvalues_top(assemble_m0(x, grid, curve).H, 1)[0][0]))
            op = build_m1(x, grid, sphere, t1, curve)
            if op.coarse:
                log.warning("sphere grid M=%d is coarse for the twisted maps at N=%d "
                            "(resolution ratio %.2f)", sphere.M, N, op.resolution_ratio)
            adj = m1_adjoint_defect(op, cfg.seed)
            nrm = m1_norm_estimate(op, seed=cfg.seed)
            rec = {"x": _cjson(x), "N": N, "M": sphere.M, "t1": _cjson(t1),
                   "adjoint_defect": _check(adj, tol.adjoint),
                   "norm_ratio": _check(nrm / h0, 1 + tol.norm_slack, nrm / h0 <= 1 + tol.norm_slack),
                   "norm_m1": nrm, "norm_m0": h0,
                   "resolution_ratio": op.resolution_ratio, "coarse": op.coarse}
            ok &= rec["adjoint_defect"]["passed"] and rec["norm_ratio"]["passed"]
            records.append(rec)
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "m1.json"),
               {"command": "operator", "code_version": CODE_VERSION, "config": cfg.to_dict(),
                "records": records, "passed": bool(ok)})
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_compare_p1(cfg: RunConfig) -> int:
    if cfg.m != 0:
        raise ConfigError("compare-p1 compares m = 0 operators; set m = 0")
    rc = _need_m0(cfg, " with the same config")
    if rc is not None:
        return rc
    thr = cfg.tolerances.p1_threshold
    out, ok = [], True
    for ix, x in enumerate(cfg.hecke_points):
        per_n, gaps = [], []
        for N in cfg.grid:
            a = _top(_operator(cfg, "m0", ix, N, build=False).H, cfg.top_k)
            b = _top(_operator(cfg, "p1", ix, N).H, cfg.top_k)
            # compared by modulus: near-degenerate +-pairs swap sign order between assemblies
            diffs = p1_match(np.abs(a), np.abs(b))
            gaps.append(max(diffs))
            per_n.append({"N": N, "eigenvalues_m0": [float(v) for v in a],
                          "eigenvalues_p1": [float(v) for v in b],
                          "relative_differences": [_check(d, thr) for d in diffs]})
        final = all(d["passed"] for d in per_n[-1]["relative_differences"])
        shrinking = _strictly_decreasing(gaps)
        ok &= final and shrinking
        out.append({"x": _cjson(x), "top_k": cfg.top_k, "threshold": thr, "per_N": per_n,
                    "max_gap": {"N": list(cfg.grid), "values": gaps, "strictly_decreasing": shrinking},
                    "passed": bool(final and shrinking)})
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "compare_p1.json"),
               {"command": "compare-p1", "code_version": CODE_VERSION, "config": cfg.to_dict(),
                "comparisons": out, "passed": bool(ok)})
    if not ok:
        log.error("m0 vs wp-plane spectra disagree beyond threshold %.3g or the gap does not shrink", thr)
    return EXIT_OK if ok else EXIT_NUMERICAL


def cmd_spectrum(cfg: RunConfig) -> int:
    if cfg.m != 0:
        raise ConfigError("spectrum reads m = 0 operator caches; set m = 0")
    rc = _need_m0(cfg, " with the same config")
    if rc is not None:
        return rc
    out, ok = [], True
    for ix, x in enumerate(cfg.hecke_points):
        tops, per_n = [], []
        for N in cfg.grid:
            op = _operator(cfg, "m0", ix, N, build=False)
            ev = _top(op.H, cfg.top_k)
            s = np.abs(ev)
            tops.append(s)
            per_n.append({"N": N, "eigenvalues": [float(v) for v in ev],
                          "ratios": [float(v / ev[0]) for v in ev],
                          "decay_profile": [float(v / s[0]) for v in s],
                          "selfadjoint_defect": _check(op.selfadjoint_defect,
                                                       cfg.tolerances.symmetry_c / N)})
        changes = [[float(v) for v in np.abs(b - a) / np.abs(b)] for a, b in zip(tops, tops[1:])]
        per_index = []
        for k in range(cfg.top_k):
            seq = [c[k] for c in changes]
            dec = _strictly_decreasing(seq)
            ok &= dec
            per_index.append({"index": k, "relative_changes": seq, "strictly_decreasing": dec})
        out.append({"x": _cjson(x), "per_N": per_n,
                    "cauchy": {"N": list(cfg.grid), "per_index": per_index}})
    os.makedirs(cfg.output_dir, exist_ok=True)
    _dump_json(os.path.join(cfg.output_dir, "spectrum.json"),
               {"command": "spectrum", "code_version": CODE_VERSION, "config": cfg.to_dict(),
                "spectra": out, "passed": bool(ok)})
    return EXIT_OK if ok else EXIT_NUMERICAL


COMMANDS = {"identities": cmd_identities, "operator": cmd_operator,
            "compare-p1": cmd_compare_p1, "spectrum": cmd_spectrum}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ellhecke", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", metavar="PATH", help="JSON run configuration")
    ap.add_argument("--out", metavar="DIR", help="output directory (overrides output_dir)")
    ap.add_argument("--seed", type=int, help="seed for randomized identity sampling")
    ap.add_argument("--grid", metavar="N[,N...]", help="grid resolutions")
    ap.add_argument("--hecke-x", metavar="RE,IM[;...]", help="Hecke points")
    ap.add_argument("-q", "--quiet", action="store_true", help="only warnings and errors")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s: %(message)s", stream=sys.stderr)
    try:
        cfg = config_from_args(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](cfg)
    except (ConfigError, ParameterError) as exc:
        log.error("configuration error: %s", exc)
        return EXIT_CONFIG
    except EllHeckeError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
