"""Hecke kernel |f'_q / f| on the torus, the symmetric quartic Q, and the
pushed-forward kernel on the wp-plane.

All absolute values are ordinary complex moduli and the kernel is a density
against Lebesgue area measure d^2 q.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .elliptic import Curve, lattice_distance, wp_batch, zlog_batch
from .errors import SingularArgumentError


@dataclass(frozen=True)
class KernelValue:
    value: float
    dist_to_singular: float


def singular_points(p, x):
    """The four points +-p+-x where K(p, ., x) blows up (modulo the lattice)."""
    return (p + x, p - x, -p + x, -p - x)


def singular_distance(p, q, x, curve: Curve):
    """Lattice distance from q to the nearest of +-p+-x."""
    d = np.minimum.reduce(
        [np.asarray(lattice_distance(q - s, curve)) for s in singular_points(p, x)]
    )
    return float(d) if d.ndim == 0 else d


def zsum_batch(p, q, x, curve: Curve):
    """Z(p+q-x) + Z(q+x-p) - Z(q-x-p) - Z(q+x+p) = (log f)'_q, symmetric in p, q, x."""
    Z = zlog_batch
    return Z(p + q - x, curve) + Z(q + x - p, curve) - Z(q - x - p, curve) - Z(q + x + p, curve)


def K_torus_batch(p, q, x, curve: Curve):
    return np.abs(zsum_batch(p, q, x, curve))


def K_torus(p, q, x, curve: Curve) -> KernelValue:
    d = singular_distance(p, q, x, curve)
    if d < curve.eps_sing:
        raise SingularArgumentError("q lies on the singular divisor q = +-p+-x", d)
    return KernelValue(float(K_torus_batch(complex(p), complex(q), complex(x), curve)), float(d))


def Q_batch(r, s, t, g2, g3):
    e1 = r + s + t
    e2 = r * s + s * t + r * t
    e3 = r * s * t
    return e2 * e2 - 4 * e1 * e3 + 0.5 * g2 * e2 + g3 * e1 + g2 * g2 / 16


def Q_eval(r, s, t, curve: Curve) -> complex:
    """r^2 s^2 + r^2 t^2 + s^2 t^2 - 2rst(r+s+t) + g2/2 (rs+st+rt) + g3 (r+s+t) + g2^2/16.

    Arguments are sorted before evaluation so that the result is bitwise
    invariant under permutations.
    """
    r, s, t = sorted((complex(r), complex(s), complex(t)), key=lambda z: (z.real, z.imag))
    return complex(Q_batch(r, s, t, curve.g2, curve.g3))


def K_cross_batch(p, q, x, curve: Curve):
    """|wp'(p) wp'(q) wp'(x)| / |Q(wp q, wp p, wp x)|, the second closed form of K."""
    wpp_, dp = wp_batch(p, curve)
    wpq, dq = wp_batch(q, curve)
    wpx, dx = wp_batch(x, curve)
    return np.abs(dp * dq * dx) / np.abs(Q_batch(wpq, wpp_, wpx, curve.g2, curve.g3))


def K_p1_batch(r, s, t, curve: Curve):
    cubic = 4 * t ** 3 - curve.g2 * t - curve.g3
    return np.sqrt(np.abs(cubic)) / np.abs(Q_batch(r, s, t, curve.g2, curve.g3))


def K_p1(r, s, t, curve: Curve) -> float:
    """Kernel on the wp-plane: |4t^3 - g2 t - g3|^(1/2) / |Q(r, s, t)|.

    This is the density for which the half-density pushforward along wp
    carries K_torus to the plane:
    K_p1(wp p, wp q, wp x) |wp'(p)| |wp'(q)| = K_torus(p, q, x).
    """
    r, s, t = complex(r), complex(s), complex(t)
    Q = Q_eval(r, s, t, curve)
    scale = max(1.0, abs(r), abs(s), abs(t)) ** 4
    if abs(Q) < curve.eps_sing * scale:
        raise SingularArgumentError("Q(r, s, t) = 0: on the singular divisor", abs(Q) / scale)
    return float(K_p1_batch(r, s, t, curve))
