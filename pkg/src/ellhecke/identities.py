"""Seeded identity suite over the special functions, the modification geometry
and the kernel.

Every check returns an IdentityRecord.  Residuals are relative,
|a - b| / max(1, |a|, |b|), unless the check says otherwise.  Tolerances are
given for a base tolerance of 1e-9 and scale with the ``tol`` argument, so a
tighter ``tol`` tightens every check by the same factor.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import cubature

from .elliptic import Curve, lattice_distance, theta_batch, wp_batch, zlog_batch
from .errors import DegenerateError
from .heckegeom import (
    L_factor,
    commutation_defect,
    f_batch,
    logf_dp_batch,
    logf_dq_batch,
    measure_poly,
    mobius_g,
    residue_residuals,
    solve_q,
)
from .moduli import proj, proj_distance
from .kernel import K_cross_batch, K_torus_batch, Q_batch, zsum_batch

BASE_TOL = 1e-9
TAUS = (1j, 0.3 + 1.1j, complex(math.cos(math.pi / 3), math.sin(math.pi / 3)))
# sampled arguments stay this far (lattice distance) from every pole involved
MIN_DIST = 0.05
# transported lines this close (projectively) to 0 or infinity are redrawn
LINE_MARGIN = 1e-3

ORACLE_TAU = 0.3 + 1.1j
ORACLE_P = 0.31 + 0.17j
ORACLE_X = 0.22 + 0.05j
ORACLE_S = 0.7 + 0.4j


@dataclass(frozen=True)
class IdentityRecord:
    name: str
    samples: int
    max_residual: float
    tol: float
    passed: bool

    def to_dict(self) -> dict:
        return asdict(self)


def _record(name, residuals, tol) -> IdentityRecord:
    r = np.asarray(residuals, dtype=float).ravel()
    worst = float(np.max(r)) if r.size else float("nan")
    return IdentityRecord(name, int(r.size), worst, float(tol), bool(r.size) and worst < tol)


def _rel(a, b):
    a = np.asarray(a)
    b = np.asarray(b)
    return np.abs(a - b) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))


def _points(rng, curve: Curve, k: int) -> np.ndarray:
    ab = rng.uniform(-1, 1, size=(k, 2))
    return ab[:, 0] + ab[:, 1] * curve.tau


def _sample(rng, curve: Curve, n: int, k: int, guards) -> np.ndarray:
    """n tuples of k points alpha + beta tau with alpha, beta in [-1, 1), each
    tuple redrawn until every guard(*tuple) is MIN_DIST away from the lattice."""
    out = []
    while len(out) < n:
        z = _points(rng, curve, k)
        if all(lattice_distance(g(*z), curve) >= MIN_DIST for g in guards):
            out.append(z)
    return np.array(out)


def _zsum_guards():
    # the twelve combinations +-a +-b +-c that can hit a pole of some permutation
    gs = []
    for s1 in (1, -1):
        for s2 in (1, -1):
            gs.append(lambda a, b, c, s1=s1, s2=s2: a + s1 * b + s2 * c)
            gs.append(lambda a, b, c, s1=s1, s2=s2: b + s1 * c + s2 * a)
            gs.append(lambda a, b, c, s1=s1, s2=s2: c + s1 * a + s2 * b)
    return gs


# ---------------------------------------------------------------------------
# special functions


def special_function_checks(curve: Curve, rng, n: int = 200, tol: float = BASE_TOL):
    tau, g2, g3 = curve.tau, curve.g2, curve.g3
    z = _sample(rng, curve, n, 1, [lambda z: z, lambda z: 2 * z])[:, 0]
    th = theta_batch(z, curve)
    zl = zlog_batch(z, curve)
    wp, dwp = wp_batch(z, curve)
    ddwp = 6 * wp ** 2 - g2 / 2
    recs = [
        _record("theta(z+1) = -theta(z)", _rel(theta_batch(z + 1, curve), -th), tol),
        _record("theta(z+tau) = -exp(-i pi (tau+2z)) theta(z)",
                _rel(theta_batch(z + tau, curve), -np.exp(-1j * np.pi * (tau + 2 * z)) * th), tol),
        _record("theta(-z) = -theta(z)", _rel(theta_batch(-z, curve), -th), tol),
        _record("Z(t+1) = Z(t), Z(t+tau) = Z(t) - 2 pi i",
                np.maximum(_rel(zlog_batch(z + 1, curve), zl),
                           _rel(zlog_batch(z + tau, curve), zl - 2j * np.pi)), tol),
        _record("wp'^2 = 4 wp^3 - g2 wp - g3", _rel(dwp ** 2, 4 * wp ** 3 - g2 * wp - g3), tol),
        _record("wp(2z) = (wp''/wp')^2 / 4 - 2 wp",
                _rel(wp_batch(2 * z, curve)[0], 0.25 * (ddwp / dwp) ** 2 - 2 * wp), tol),
    ]

    px = _sample(rng, curve, n, 2, [lambda p, x: p, lambda p, x: x,
                                    lambda p, x: p - x, lambda p, x: p + x])
    p, x = px[:, 0], px[:, 1]
    wpp, dp = wp_batch(p, curve)
    wpx, dx = wp_batch(x, curve)
    lhs = wp_batch(p - x, curve)[0] - wp_batch(p + x, curve)[0]
    recs.append(_record("wp(p-x) - wp(p+x) = wp'(p) wp'(x) / (wp p - wp x)^2",
                        _rel(lhs, dp * dx / (wpp - wpx) ** 2), tol))

    p, q, x = _sample(rng, curve, n, 3, _zsum_guards()).T
    base = zsum_batch(p, q, x, curve)
    perms = ((q, p, x), (x, q, p), (p, x, q), (q, x, p), (x, p, q))
    recs.append(_record("Z-sum symmetric in (p, q, x)",
                        np.max([_rel(zsum_batch(*pp, curve), base) for pp in perms], axis=0), tol))
    return recs


# ---------------------------------------------------------------------------
# modification geometry


def grid_newton_oracle(p, x, s, curve: Curve, n: int = 400) -> complex:
    """q with f(p, q, x) = s: the best node of an n x n grid on the unit cell,
    refined by Newton on f."""
    t = (np.arange(n) + 0.5) / n
    al, be = np.meshgrid(t, t, indexing="ij")
    q = (al + be * curve.tau).ravel()
    with np.errstate(divide="ignore", invalid="ignore"):
        err = np.abs(f_batch(p, q, x, curve) - s)
    q0 = complex(q[np.nanargmin(err)])
    for _ in range(50):
        fv = complex(f_batch(p, q0, x, curve))
        step = (fv - s) / (fv * complex(logf_dq_batch(p, q0, x, curve)))
        q0 -= step
        if abs(step) < 1e-15:
            break
    return q0


def _pm_distance(a, b, curve: Curve) -> float:
    return min(lattice_distance(a - b, curve), lattice_distance(a + b, curve))


def _random_line(rng) -> complex:
    return complex(rng.uniform(0.2, 2.0) * np.exp(2j * np.pi * rng.uniform()))


def geometry_checks(curve: Curve, rng, n: int = 50, tol: float = BASE_TOL):
    scale = tol / BASE_TOL
    recs = []
    if curve.tau == ORACLE_TAU:
        sol = solve_q(ORACLE_P, ORACLE_X, ORACLE_S, curve)
        q_or = grid_newton_oracle(ORACLE_P, ORACLE_X, ORACLE_S, curve)
        recs.append(_record("solve_q vs 400x400 grid + Newton oracle",
                            [_pm_distance(sol.q, q_or, curve)], 1e-8 * scale))

    th = lambda z: complex(theta_batch(z, curve))  # noqa: E731
    root_sum, residues, inverse, det_id, comm, fit = [], [], [], [], [], []
    while len(root_sum) < n:
        p, x, t, u = _points(rng, curve, 4)
        s, w = _random_line(rng), _random_line(rng)
        guards = [p, x, p + x, p - x, 2 * p, 2 * x, u, 2 * u, u - x, u + x, u + p, u - p, t, t - 2 * x]
        if min(lattice_distance(g, curve) for g in guards) < MIN_DIST:
            continue
        try:
            sol = solve_q(p, x, s, curve)
            q = sol.q
            if min(lattice_distance(g, curve) for g in
                   (2 * q, q - p - x, q + p + x, q - x + p, q + x - p, q - u, q + u)) < MIN_DIST:
                continue
            # transported lines must stay as generic as the drawn ones
            moved = (mobius_g(x, p, q, 2 * u, curve).apply(proj(w)),
                     mobius_g(u, p, solve_q(p, u, w, curve).q, 2 * x, curve).apply(proj(s)))
            if min(min(proj_distance(m, (0j, 1 + 0j)), proj_distance(m, (1 + 0j, 0j)))
                   for m in moved) < LINE_MARGIN:
                continue
            cd = max(commutation_defect(p, x, u, s, w, t, curve))
        except DegenerateError:
            # a transported line landed on 0 or infinity; redraw the tuple
            continue
        root_sum.append(lattice_distance(sol.r1 + sol.r2 - 2 * x, curve))
        residues.append(max(residue_residuals(sol, p, x, curve)))
        g_pq = mobius_g(x, p, q, t, curve)
        inverse.append(mobius_g(x, q, p, t, curve).distance(g_pq.inverse()))
        det_id.append(float(_rel(g_pq.det, L_factor(p, q, x, curve) * th(t) * th(t - 2 * x))))
        comm.append(cd)
        fit.append(measure_poly(p, x, curve).residual)
    recs += [
        _record("r1 + r2 = 2x mod lattice", root_sum, 1e-10 * scale),
        _record("residue identities at r1", residues, tol),
        _record("g_{x,q,p} = g_{x,p,q}^-1 in PGL2", inverse, tol),
        _record("AD - BC = L theta(t) theta(t - 2x)", det_id, tol),
        _record("two modifications commute (PGL2 up to scalar)", comm, 1e-8 * scale),
        _record("f'_p = P(f) over-determined fit residual", fit, tol),
    ]
    return recs


# ---------------------------------------------------------------------------
# kernel


def kernel_checks(curve: Curve, rng, n: int = 200, tol: float = BASE_TOL):
    scale = tol / BASE_TOL
    g2, g3 = curve.g2, curve.g3
    guards = _zsum_guards() + [lambda a, b, c: a, lambda a, b, c: b, lambda a, b, c: c,
                               lambda a, b, c: 2 * c]
    p, q, x = _sample(rng, curve, n, 3, guards).T
    K = K_torus_batch(p, q, x, curve)
    perms = ((q, p, x), (x, q, p), (p, x, q), (q, x, p), (x, p, q))
    wpp = wp_batch(p, curve)[0]
    wpq = wp_batch(q, curve)[0]
    wpx, dx = wp_batch(x, curve)
    prod = (wpp - wpx) ** 2 * (wpq - wp_batch(p - x, curve)[0]) * (wpq - wp_batch(p + x, curve)[0])
    chain = wpx ** 4 + g2 / 2 * wpx ** 2 + 2 * g3 * wpx + g2 ** 2 / 16
    return [
        _record("K_torus symmetric in (p, q, x)",
                np.max([_rel(K_torus_batch(*pp, curve), K) for pp in perms], axis=0), tol),
        _record("Z-sum form vs |wp' wp' wp' / Q| form", _rel(K, K_cross_batch(p, q, x, curve)),
                1e-8 * scale),
        _record("Q vs shifted product form", _rel(Q_batch(wpq, wpp, wpx, g2, g3), prod), tol),
        _record("wp'(x)^2 wp(2x) = wp^4 + g2/2 wp^2 + 2 g3 wp + g2^2/16",
                _rel(dx ** 2 * wp_batch(2 * x, curve)[0], chain), tol),
    ]


def singularity_exponent(curve: Curve, p=ORACLE_P, x=ORACLE_X, angle: float = 0.7) -> float:
    """Least-squares slope of log K against log |q - q0| as q -> q0 = p - x."""
    r = np.logspace(-7, -3, 25)
    q = p - x + r * complex(math.cos(angle), math.sin(angle))
    K = K_torus_batch(p, q, x, curve)
    return float(np.polyfit(np.log(r), np.log(K), 1)[0])


def bump(q, q0, rho):
    """Smooth bump exp(-1/(1 - |q - q0|^2/rho^2)) supported on the open disc."""
    d2 = np.abs(np.asarray(q) - q0) ** 2 / rho ** 2
    out = np.zeros(d2.shape)
    m = d2 < 1
    out[m] = np.exp(-1.0 / (1.0 - d2[m]))
    return out


def measure_change_of_variables(curve: Curve, p=ORACLE_P, x=ORACLE_X, q0=0.4 + 0.35j,
                                rho: float = 0.08, rtol: float = 1e-6):
    """Integrate a bump at q0 against the Hecke measure in both coordinates.

    q-form: int phi(q) K(p, q, x) dA(q).  v-form, with v = f(p, q, x):
    int sum_(both branches q(v)) phi(q) |q'_p| / |v P(v)| dA(v), P from
    measure_poly.  Returns (q-form, v-form, relative difference)."""
    md = measure_poly(p, x, curve)

    def qform(X):
        q = X[:, 0] + 1j * X[:, 1]
        return bump(q, q0, rho) * K_torus_batch(p, q, x, curve)

    span = 1.01 * rho
    qa = cubature(qform, [q0.real - span, q0.imag - span], [q0.real + span, q0.imag + span],
                  rtol=rtol, atol=0, max_subdivisions=100000).estimate

    ring = q0 + rho * np.exp(2j * np.pi * np.arange(512) / 512)
    vr = f_batch(p, ring, x, curve)
    pad = 0.01 * float(np.ptp(vr.real) + np.ptp(vr.imag))
    v0 = complex(f_batch(p, q0, x, curve))

    def branch(v):
        # Newton on f, continued from q0 along the segment v0 -> v
        q = np.full(v.shape, q0, dtype=complex)
        for frac in (0.25, 0.5, 0.75, 1.0):
            target = v0 + frac * (v - v0)
            for _ in range(40):
                fv = f_batch(p, q, x, curve)
                step = (fv - target) / (fv * logf_dq_batch(p, q, x, curve))
                q = q - step
                if np.all(np.abs(step) < 1e-14):
                    break
        return q

    def vform(X):
        v = X[:, 0] + 1j * X[:, 1]
        q = branch(v)
        acc = np.zeros(len(v))
        for qb in (q, -q):
            qpd = np.abs(logf_dp_batch(p, qb, x, curve) / logf_dq_batch(p, qb, x, curve))
            acc += bump(qb, q0, rho) * qpd
        return acc / np.abs(v * md.P(v))

    va = cubature(vform, [vr.real.min() - pad, vr.imag.min() - pad],
                  [vr.real.max() + pad, vr.imag.max() + pad],
                  rtol=rtol, atol=0, max_subdivisions=100000).estimate
    return float(qa), float(va), float(abs(qa - va) / abs(qa))


def run_suite(seed: int = 1, taus=TAUS, tol: float = BASE_TOL, n_special: int = 200,
              n_geometry: int = 50) -> list[IdentityRecord]:
    """All identity checks at every tau, in a fixed order."""
    recs: list[IdentityRecord] = []
    for k, tau in enumerate(taus):
        curve = Curve.from_tau(tau)
        rng = np.random.default_rng([seed, k])
        tag = f" [tau={complex(tau).real:.4g}{complex(tau).imag:+.4g}i]"
        for r in (special_function_checks(curve, rng, n_special, tol)
                  + geometry_checks(curve, rng, n_geometry, tol)
                  + kernel_checks(curve, rng, n_special, tol)):
            recs.append(IdentityRecord(r.name + tag, r.samples, r.max_residual, r.tol, r.passed))
    return recs
