"""Explicit Hecke modification on Bun_0: solving for q, the Mobius maps acting on
the parabolic lines, and the measure data entering the Hecke integral.

Convention: the modification happens at the point 2x of the curve and every
function here takes its half ``x``.  The line at 2x is (s : 1).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .elliptic import (
    Curve,
    _pick_sign_rep,
    lattice_distance,
    theta_batch,
    wp_batch,
    wp_inverse,
    zlog_batch,
)
from .errors import (
    DegenerateError,
    InconsistencyError,
    NoConvergenceError,
    SingularArgumentError,
)
from .moduli import ModuliPoint, Proj, canonicalize, proj, proj_distance

EPS_LINE = 1e-7


@dataclass(frozen=True)
class MobiusMap:
    """2x2 complex matrix up to scalar, acting by y -> (A y + B)/(C y + D)."""

    A: complex
    B: complex
    C: complex
    D: complex

    @classmethod
    def from_matrix(cls, m) -> "MobiusMap":
        m = np.asarray(m, dtype=complex)
        return cls(complex(m[0, 0]), complex(m[0, 1]), complex(m[1, 0]), complex(m[1, 1]))

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.A, self.B], [self.C, self.D]], dtype=complex)

    @property
    def det(self) -> complex:
        return self.A * self.D - self.B * self.C

    def unit_det(self) -> float:
        """|det| of the Frobenius-normalized matrix, in [0, 1/2]."""
        n2 = abs(self.A) ** 2 + abs(self.B) ** 2 + abs(self.C) ** 2 + abs(self.D) ** 2
        return abs(self.det) / n2

    def is_degenerate(self, eps: float = 1e-9) -> bool:
        return self.unit_det() < eps

    def apply(self, y):
        """Image of y; returns a normalized projective pair for pair input,
        a complex number (possibly inf) otherwise."""
        if isinstance(y, tuple):
            u, w = y
            return proj((self.A * u + self.B * w, self.C * u + self.D * w))
        y = complex(y)
        num = self.A * y + self.B
        den = self.C * y + self.D
        return complex("inf") if den == 0 else num / den

    def __matmul__(self, other: "MobiusMap") -> "MobiusMap":
        return MobiusMap.from_matrix(self.matrix @ other.matrix)

    def inverse(self) -> "MobiusMap":
        return MobiusMap(self.D, -self.B, -self.C, self.A)

    def distance(self, other: "MobiusMap") -> float:
        """Distance in PGL2: ||M1/|M1| - e^{i phi} M2/|M2||_F minimized over phi."""
        m1 = self.matrix.ravel()
        m2 = other.matrix.ravel()
        m1 = m1 / np.linalg.norm(m1)
        m2 = m2 / np.linalg.norm(m2)
        ip = np.vdot(m2, m1)
        phase = ip / abs(ip) if ip != 0 else 1.0
        return float(np.linalg.norm(m1 - phase * m2))


IDENTITY = MobiusMap(1, 0, 0, 1)
INVERSION = MobiusMap(0, 1, 1, 0)


@dataclass(frozen=True)
class HeckeSolve:
    q: complex
    r1: complex
    r2: complex
    c: complex
    s: Proj
    wp_q: complex


@dataclass(frozen=True)
class MeasureData:
    """Quadratic P(v) = c0 + c1 v + c2 v^2 with f'_p = P(f), from an interpolation fit."""

    P_coeffs: tuple[complex, complex, complex]
    residual: float
    cond: float

    def P(self, v):
        c0, c1, c2 = self.P_coeffs
        return c0 + c1 * v + c2 * v * v

    def roots(self) -> np.ndarray:
        c0, c1, c2 = self.P_coeffs
        return np.roots([c2, c1, c0])


# ---------------------------------------------------------------------------
# the cross-ratio-like function f and its derivatives


def f_batch(p, q, x, curve: Curve):
    th = theta_batch
    return (th(p + q - x, curve) * th(q + x - p, curve)) / (
        th(q - x - p, curve) * th(q + x + p, curve)
    )


def logf_dq_batch(p, q, x, curve: Curve):
    """(log f)'_q = Z(p+q-x) + Z(q+x-p) - Z(q-x-p) - Z(q+x+p)."""
    Z = zlog_batch
    return Z(p + q - x, curve) + Z(q + x - p, curve) - Z(q - x - p, curve) - Z(q + x + p, curve)


def logf_dp_batch(p, q, x, curve: Curve):
    Z = zlog_batch
    return Z(p + q - x, curve) - Z(q + x - p, curve) + Z(q - x - p, curve) - Z(q + x + p, curve)


def _guard_poles(p, q, x, curve: Curve):
    d = min(lattice_distance(q - x - p, curve), lattice_distance(q + x + p, curve))
    if d < curve.eps_sing:
        raise SingularArgumentError("f has a pole at q = +-(x+p)", d)


def f_cross(p, q, x, curve: Curve) -> complex:
    """f(p,q,x) = th(p+q-x) th(q+x-p) / (th(q-x-p) th(q+x+p)); even and elliptic in q."""
    _guard_poles(p, q, x, curve)
    return complex(f_batch(complex(p), complex(q), complex(x), curve))


def f_dq(p, q, x, curve: Curve) -> complex:
    _guard_poles(p, q, x, curve)
    return complex(f_batch(p, q, x, curve) * logf_dq_batch(p, q, x, curve))


def f_dp(p, q, x, curve: Curve) -> complex:
    _guard_poles(p, q, x, curve)
    return complex(f_batch(p, q, x, curve) * logf_dp_batch(p, q, x, curve))


def q_p_derivative(p, q, x, curve: Curve) -> complex:
    """dq/dp along the level set f(p, q, x) = v, i.e. -f'_p / f'_q."""
    _guard_poles(p, q, x, curve)
    return complex(-logf_dp_batch(p, q, x, curve) / logf_dq_batch(p, q, x, curve))


# ---------------------------------------------------------------------------
# solving for q


def _line_value(s, eps_line: float) -> tuple[Proj, complex]:
    sp = proj(s)
    if proj_distance(sp, (0j, 1 + 0j)) < eps_line or proj_distance(sp, (1 + 0j, 0j)) < eps_line:
        raise DegenerateError("line parameter s is 0 or infinity (degenerate modification)")
    return sp, sp[0] / sp[1]


def solve_q(p, x, s, curve: Curve, eps_line: float = EPS_LINE) -> HeckeSolve:
    """Solve f(p, q, x) = s for q.

    f is even elliptic of order two in q with zeros at +-(x-p) and poles at
    +-(x+p), so f = c0 (wp(q) - wp(x-p)) / (wp(q) - wp(x+p)) with c0 = f(p,0,x).
    That is linear in wp(q); q is then recovered by wp_inverse and polished by
    Newton on f itself.  Of the pair +-q the deterministic cell representative
    is returned.
    """
    p, x = complex(p), complex(x)
    sp, sv = _line_value(s, eps_line)
    th_m = complex(theta_batch(p - x, curve))
    th_p = complex(theta_batch(p + x, curve))
    if abs(th_p) < curve.eps_sing:
        raise SingularArgumentError("p + x on the lattice", lattice_distance(p + x, curve))
    c0 = (th_m / th_p) ** 2
    wpa, _ = wp_batch(np.array([x - p, x + p]), curve)
    A, B = complex(wpa[0]), complex(wpa[1])
    den = sv - c0
    if abs(den) <= 1e-15 * max(1.0, abs(sv)):
        q = 0j
        wp_q = complex("inf")
    else:
        wp_q = (sv * B - c0 * A) / den
        q = wp_inverse(wp_q, curve)
        for _ in range(8):
            fv = complex(f_batch(p, q, x, curve))
            d = fv * complex(logf_dq_batch(p, q, x, curve))
            if d == 0 or not np.isfinite(d):
                break
            step = (fv - sv) / d
            q -= step
            if abs(step) < 1e-16:
                break
        q = _pick_sign_rep(q, curve)
        fv = complex(f_batch(p, q, x, curve))
        res = abs(fv - sv)
        # near a pole of f the forward residual is dominated by |f'_q| * ulp(q);
        # accept when the backward error in q is at rounding level instead
        back = res / max(abs(fv * complex(logf_dq_batch(p, q, x, curve))), 1e-300)
        if not (res <= curve.tol * max(1.0, abs(sv)) or back <= 1e-13 * max(1.0, abs(q))):
            raise NoConvergenceError("solve_q: f(p,q,x) != s after polishing", res)
        wp_q = complex(wp_batch(np.array([q]), curve)[0][0])
    r1, r2 = x + q, x - q
    c = complex(theta_batch(r1 - 2 * x + p, curve) / theta_batch(r1 - 2 * x - p, curve))
    return HeckeSolve(q=q, r1=r1, r2=r2, c=c, s=sp, wp_q=wp_q)


def residue_residuals(sol: HeckeSolve, p, x, curve: Curve) -> tuple[float, float]:
    """Relative residuals of c th(r-2x-p) = th(r-2x+p) and c th(r-p) = s th(r+p) at r = r1."""
    th = lambda z: complex(theta_batch(z, curve))  # noqa: E731
    r = sol.r1
    s = sol.s[0] / sol.s[1]
    lhs1, rhs1 = sol.c * th(r - 2 * x - p), th(r - 2 * x + p)
    lhs2, rhs2 = sol.c * th(r - p), s * th(r + p)
    e1 = abs(lhs1 - rhs1) / max(abs(lhs1), abs(rhs1), 1e-300)
    e2 = abs(lhs2 - rhs2) / max(abs(lhs2), abs(rhs2), 1e-300)
    return e1, e2


# ---------------------------------------------------------------------------
# Mobius maps on the parabolic lines


def mobius_entries_batch(x, p, q, t, curve: Curve):
    """Entries (A, B, C, D) of g_{x,p,q} at marked point t, vectorized and unchecked."""
    th = theta_batch

    def tt(a):
        return th(t - a, curve) / th(-a, curve)

    return tt(-p + x + q), -tt(p + x + q), tt(-p + x - q), -tt(p + x - q)


def mobius_g(x, p, q, t, curve: Curve) -> MobiusMap:
    """The map y_i -> z_i on the line at marked point t.

        [[ tt(t, -p+x+q), -tt(t, p+x+q) ],
         [ tt(t, -p+x-q), -tt(t, p+x-q) ]]     with tt(z, a) = th(z-a)/th(-a).
    """
    x, p, q, t = complex(x), complex(p), complex(q), complex(t)
    for a in (-p + x + q, p + x + q, -p + x - q, p + x - q):
        d = lattice_distance(a, curve)
        if d < curve.eps_sing:
            raise DegenerateError(f"theta-tilde argument {a} lies on the lattice (distance {d:.2e})")
    A, B, C, D = (complex(v) for v in mobius_entries_batch(x, p, q, t, curve))
    return MobiusMap(A, B, C, D)


def L_factor(p, q, x, curve: Curve) -> complex:
    """-th(2p) th(2q) / (th(p-x-q) th(q-x-p) th(p+q+x) th(p+q-x)); AD - BC = L th(t) th(t-2x)."""
    p, q, x = complex(p), complex(q), complex(x)
    den_args = (p - x - q, q - x - p, p + q + x, p + q - x)
    d = min(lattice_distance(a, curve) for a in den_args)
    if d < curve.eps_sing:
        raise SingularArgumentError("L has a pole", d)
    th = lambda z: complex(theta_batch(z, curve))  # noqa: E731
    den = th(den_args[0]) * th(den_args[1]) * th(den_args[2]) * th(den_args[3])
    return -th(2 * p) * th(2 * q) / den


def hecke_transform(pt: ModuliPoint, x, s, curve: Curve, eps_line: float = EPS_LINE):
    """Image of (p, y) under S_0 o HM_{2x,(s:1)}, canonicalized, with the solve data."""
    sol = solve_q(pt.p, x, s, curve, eps_line=eps_line)
    zs = []
    for y, t in zip(pt.y, curve.marked_points[1:]):
        zs.append(mobius_g(x, pt.p, sol.q, t, curve).apply(y))
    out, _ = canonicalize(ModuliPoint(sol.q, tuple(zs)), curve)
    return out, sol


# ---------------------------------------------------------------------------
# measure data

_FIT_CANDIDATES = [
    (0.137, 0.291), (0.412, 0.173), (0.268, 0.389), (0.071, 0.453), (0.333, 0.111),
    (0.191, 0.237), (0.457, 0.319), (0.219, 0.061), (0.377, 0.427), (0.029, 0.199),
    (0.301, 0.347), (0.163, 0.083),
]


def measure_poly(p, x, curve: Curve, tol: float | None = None) -> MeasureData:
    """Fit P with f'_p(q) = P(f(q)) from three q samples and verify on five more."""
    p, x = complex(p), complex(x)
    tol = curve.tol if tol is None else tol
    tau = curve.tau
    qs = []
    for al, be in _FIT_CANDIDATES:
        q = al + be * tau
        dist = min(lattice_distance(q - e1 * p - e2 * x, curve) for e1 in (1, -1) for e2 in (1, -1))
        if dist > 0.05:
            qs.append(q)
        if len(qs) == 8:
            break
    if len(qs) < 8:
        raise DegenerateError("measure_poly: no generic sample points")
    qs = np.array(qs)
    v = f_batch(p, qs, x, curve)
    d = v * logf_dp_batch(p, qs, x, curve)
    V = np.vander(v[:3], 3, increasing=True)
    cond = float(np.linalg.cond(V))
    if not np.isfinite(cond) or cond > 1e10:
        raise DegenerateError(f"measure_poly: f is numerically constant in q (cond {cond:.2e})")
    coeffs = np.linalg.solve(V, d[:3])
    pred = coeffs[0] + coeffs[1] * v[3:] + coeffs[2] * v[3:] ** 2
    scale = max(1.0, float(np.max(np.abs(d))))
    resid = float(np.max(np.abs(pred - d[3:]))) / scale
    if resid >= tol:
        raise InconsistencyError(f"measure_poly: verification residual {resid:.3e} >= {tol:.1e}")
    return MeasureData(tuple(complex(c) for c in coeffs), resid, cond)


# ---------------------------------------------------------------------------
# commutation of two modifications


def _double_modification(p, x1, l1, x2, l2, t, curve):
    """Modify at 2*x1 with line l1, then at 2*x2 with the transported line.

    Returns (q1, q2, first map, second map factory) so the caller can fix the
    lift of the final q before building the second matrix.
    """
    q1 = solve_q(p, x1, l1, curve).q
    moved = mobius_g(x1, p, q1, 2 * x2, curve).apply(proj(l2))
    q2 = solve_q(q1, x2, moved, curve).q
    g1 = mobius_g(x1, p, q1, t, curve)
    return q1, q2, g1


def commutation_defect(p, x, u, v, w, t, curve: Curve) -> tuple[float, float]:
    """Compare the two orders of modifying at 2x (line v) and 2u (line w).

    Returns (map distance, bundle mismatch): the PGL2 distance between the
    composite maps on the line at t, and the lattice distance between the two
    final q's up to sign.  Both vanish when the modifications commute.
    """
    qa1, qa2, ga = _double_modification(p, x, v, u, w, t, curve)
    qb1, qb2, gb = _double_modification(p, u, w, x, v, t, curve)
    mism = min(lattice_distance(qb2 - qa2, curve), lattice_distance(qb2 + qa2, curve))
    q_final = qa2  # same lift for both composites
    ma = mobius_g(u, qa1, q_final, t, curve) @ ga
    mb = mobius_g(x, qb1, q_final, t, curve) @ gb
    return ma.distance(mb), mism
