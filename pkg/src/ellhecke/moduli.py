"""Birational coordinates (p, y_1..y_m) on Bun_0 and the C2 x| Z^2 identification.

A point is stored with projective values y_i = (u : w), normalized so that
|u|^2 + |w|^2 = 1 and the first nonzero coordinate is real positive.  The group
element (flip, a, b) acts as translation-after-flip:

    flip: (p, y) -> (-p, 1/y)
    (a, b): (p, y_i) -> (p + a/2 + b tau/2, exp(2 pi i b t_i) y_i)
"""

from __future__ import annotations

import cmath
from dataclasses import dataclass

import numpy as np

from .elliptic import Curve, lattice_coords, lattice_distance, reduce_to_cell
from .errors import InvalidInputError

Proj = tuple[complex, complex]


def proj(y) -> Proj:
    """Normalize a projective value; accepts a complex number, inf, or a pair (u, w)."""
    if isinstance(y, tuple) or (isinstance(y, np.ndarray) and y.shape == (2,)):
        u, w = complex(y[0]), complex(y[1])
    else:
        y = complex(y)
        if cmath.isinf(y):
            u, w = 1.0 + 0j, 0j
        else:
            u, w = y, 1.0 + 0j
    n = np.hypot(abs(u), abs(w))
    if n == 0 or not np.isfinite(n):
        raise InvalidInputError("projective value (0:0) or non-finite")
    u, w = u / n, w / n
    lead = u if abs(u) > 1e-300 else w
    phase = lead / abs(lead)
    return (u / phase, w / phase)


def proj_to_complex(y: Proj) -> complex:
    u, w = y
    return complex("inf") if w == 0 else u / w


def proj_distance(y1: Proj, y2: Proj) -> float:
    """Chordal distance |u1 w2 - u2 w1| between normalized projective values."""
    return abs(y1[0] * y2[1] - y2[0] * y1[1])


def twist_factor(b: int, t: complex) -> complex:
    """Multiplier exp(2 pi i b t) picked up by the line at t under (a, b).

    The proof of the identification writes the same twist as exp(4 pi i b' z)
    with b' = b/2 half-integral, which is the same number.
    """
    return cmath.exp(2j * cmath.pi * b * t)


@dataclass(frozen=True)
class GroupElement:
    flip: bool = False
    a: int = 0
    b: int = 0

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        # T_v F^e T_w F^f = T_{v + (-1)^e w} F^{e+f}
        sgn = -1 if self.flip else 1
        return GroupElement(self.flip != other.flip, self.a + sgn * other.a, self.b + sgn * other.b)

    def inverse(self) -> "GroupElement":
        if self.flip:
            return self
        return GroupElement(False, -self.a, -self.b)

    @classmethod
    def identity(cls) -> "GroupElement":
        return cls()


@dataclass(frozen=True)
class ModuliPoint:
    p: complex
    y: tuple[Proj, ...] = ()

    @classmethod
    def make(cls, p, ys=()) -> "ModuliPoint":
        return cls(complex(p), tuple(proj(v) for v in ys))

    @property
    def m(self) -> int:
        return len(self.y)

    def is_generic(self, eps: float = 1e-9) -> bool:
        """All parabolic lines away from 0 and infinity."""
        return all(abs(u) > eps and abs(w) > eps for u, w in self.y)

    def is_degenerate(self, curve: Curve) -> bool:
        """2p in the lattice: the bundle has extra automorphisms."""
        return lattice_distance(2 * self.p, curve) < curve.eps_sing

    def y_complex(self) -> tuple[complex, ...]:
        return tuple(proj_to_complex(v) for v in self.y)


def _check(pt: ModuliPoint, curve: Curve):
    if pt.m != curve.m:
        raise InvalidInputError(
            f"point has {pt.m} parabolic values but curve has {curve.m} marked points"
        )


def act(g: GroupElement, pt: ModuliPoint, curve: Curve) -> ModuliPoint:
    _check(pt, curve)
    p = pt.p
    ys = list(pt.y)
    if g.flip:
        p = -p
        ys = [(w, u) for u, w in ys]
    p = p + 0.5 * g.a + 0.5 * g.b * curve.tau
    if g.b:
        ys = [(twist_factor(g.b, t) * u, w) for (u, w), t in zip(ys, curve.marked_points[1:])]
    return ModuliPoint(p, tuple(proj(v) for v in ys))


def _key(pt: ModuliPoint, curve: Curve):
    al, be = lattice_coords(pt.p, curve.tau)
    ykey = tuple(
        round(c, 10) for u, w in pt.y for c in (u.real, u.imag, w.real, w.imag)
    )
    return (round(float(be), 10), round(float(al), 10)) + ykey


def canonicalize(pt: ModuliPoint, curve: Curve) -> tuple[ModuliPoint, GroupElement]:
    """Representative with p in the half-cell of (1/2)Lattice, choosing between
    p and -p by lexicographic order of (beta, alpha, y) in lattice coordinates.

    The selected p therefore lies in {alpha in [0, 1/2), beta in [0, 1/4]}, the
    same fundamental domain the quadrature grid uses.  Returns the
    representative and the group element g with act(g, pt) == representative.
    """
    _check(pt, curve)
    cands = []
    for flip in (False, True):
        p = -pt.p if flip else pt.p
        _, a, b = reduce_to_cell(p, curve, 0.5)
        g = GroupElement(flip, -a, -b)
        cands.append((act(g, pt, curve), g))
    cands.sort(key=lambda c: _key(c[0], curve))
    return cands[0]


def equivalent(pa: ModuliPoint, pb: ModuliPoint, curve: Curve, tol: float | None = None) -> bool:
    """True iff pb is carried to pa by some group element, up to ``tol``.

    Tested directly on the orbit (nearest half-lattice translate for each
    sign) rather than by comparing canonical forms, which is unstable for
    points sitting on the boundary of the fundamental domain.
    """
    _check(pa, curve)
    _check(pb, curve)
    tol = curve.tol if tol is None else tol
    for flip in (False, True):
        pbf = -pb.p if flip else pb.p
        al, be = lattice_coords(pa.p - pbf, curve.tau)
        a, b = int(round(2 * float(al))), int(round(2 * float(be)))
        g = GroupElement(flip, a, b)
        moved = act(g, pb, curve)
        if abs(moved.p - pa.p) > tol:
            continue
        if all(proj_distance(u, v) <= tol for u, v in zip(moved.y, pa.y)):
            return True
    return False
