"""Jacobi theta function, its logarithmic derivative and Weierstrass p on C/(Z + tau Z).

Normalization: ``theta`` is the odd sine series

    theta(z) = 2 * sum_{n>=0} (-1)^n exp(i pi tau (n+1/2)^2) sin((2n+1) pi z),

which has simple zeros on the lattice and satisfies

    theta(z + 1)   = -theta(z)
    theta(z + tau) = -exp(-i pi (tau + 2z)) theta(z).

Every formula built on top of it is a ratio of thetas, so the overall constant
never matters.  Arguments are reduced to the centred cell before summation and
the quasi-periodicity factor is multiplied back in log form.

Weierstrass p is obtained from theta as ``wp = -Z' + theta'''(0)/(3 theta'(0))``
with ``Z = theta'/theta``; the invariants g2, g3 come from the Eisenstein
q-series, which is an independent route (the two are cross-checked in tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import InvalidInputError, NoConvergenceError, SingularArgumentError

EPS_SING = 1e-9
TWO_PI_I = 2j * np.pi


@dataclass(frozen=True)
class Curve:
    """Elliptic curve C/(Z + tau Z) with marked points t_0 = 0, t_1, ..., t_m."""

    tau: complex
    g2: complex
    g3: complex
    marked_points: tuple[complex, ...] = (0j,)
    series_terms: int = 32
    tol: float = 1e-9
    eps_sing: float = EPS_SING
    n_terms: int = field(init=False, repr=False, compare=False)
    wp_shift: complex = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        tau = complex(self.tau)
        if not (np.isfinite(tau.real) and np.isfinite(tau.imag)) or tau.imag <= 0:
            raise InvalidInputError(f"tau={tau!r} must lie in the upper half-plane")
        pts = tuple(complex(t) for t in self.marked_points)
        if not pts or pts[0] != 0:
            raise InvalidInputError("marked_points must start with t0 = 0")
        for i in range(len(pts)):
            for j in range(i):
                if lattice_distance_raw(pts[i] - pts[j], tau) < self.eps_sing:
                    raise InvalidInputError(
                        f"marked points t{j}, t{i} coincide modulo the lattice"
                    )
        if self.series_terms < 2:
            raise InvalidInputError("series_terms must be >= 2")
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "g2", complex(self.g2))
        object.__setattr__(self, "g3", complex(self.g3))
        object.__setattr__(self, "marked_points", pts)
        object.__setattr__(self, "n_terms", _needed_terms(tau, self.series_terms))
        th = _theta_series(np.zeros(1, dtype=complex), tau, self.n_terms, 3)
        object.__setattr__(self, "wp_shift", complex(th[3][0] / (3 * th[1][0])))

    @classmethod
    def from_tau(cls, tau, marked_points=(0j,), **kwargs) -> "Curve":
        g2, g3 = invariants_from_tau(tau)
        return cls(complex(tau), g2, g3, tuple(marked_points), **kwargs)

    @property
    def m(self) -> int:
        """Number of marked points besides t0."""
        return len(self.marked_points) - 1

    def with_marked_points(self, marked_points) -> "Curve":
        return Curve(self.tau, self.g2, self.g3, tuple(marked_points),
                     self.series_terms, self.tol, self.eps_sing)


def _needed_terms(tau: complex, cap: int) -> int:
    # After centred reduction |Im z| <= Im(tau)/2; the n-th term is bounded by
    # exp(-pi Im(tau) (n^2 - 1/4)).  Ask for e^-40 plus two spare terms for the
    # third derivative's (2n+1)^3 growth.
    n = math.sqrt(40.0 / (math.pi * tau.imag) + 0.25)
    return int(min(cap, math.ceil(n) + 3))


# ---------------------------------------------------------------------------
# lattice bookkeeping


def lattice_coords(z, tau):
    """Real coordinates (alpha, beta) with z = alpha + beta*tau."""
    z = np.asarray(z, dtype=complex)
    beta = z.imag / tau.imag
    alpha = z.real - beta * tau.real
    return alpha, beta


def reduce_to_cell(z, curve: Curve, sublattice_scale: float = 1.0):
    """Return (z0, a, b) with z = z0 + scale*(a + b*tau), z0 in the half-open cell.

    ``sublattice_scale`` is 1 for the period lattice and 1/2 for the half-period
    lattice acting on the bundle parameter.
    """
    if sublattice_scale not in (1, 1.0, 0.5):
        raise InvalidInputError("sublattice_scale must be 1 or 1/2")
    z = complex(z)
    if not (math.isfinite(z.real) and math.isfinite(z.imag)):
        raise InvalidInputError(f"non-finite argument {z!r}")
    tau = curve.tau
    alpha, beta = lattice_coords(z, tau)
    s = float(sublattice_scale)
    b = math.floor(float(beta) / s)
    a = math.floor(float(alpha) / s)
    z0 = z - s * (a + b * tau)
    # floor() can land one cell off when alpha/s sits on an integer up to rounding
    al0, be0 = lattice_coords(z0, tau)
    if float(al0) >= s:
        a += 1
        z0 -= s
    if float(be0) >= s:
        b += 1
        z0 -= s * tau
    return complex(z0), int(a), int(b)


def _reduce_centred(z, tau):
    b = np.rint(z.imag / tau.imag)
    z1 = z - b * tau
    a = np.rint(z1.real)
    return z1 - a, a, b


def lattice_distance_raw(z, tau, scale=1.0):
    """Distance from z to the nearest point of scale*(Z + tau Z)."""
    z = np.asarray(z, dtype=complex) / scale
    z0, _, _ = _reduce_centred(z, tau)
    best = np.abs(z0)
    for da in (-1, 0, 1):
        for db in (-1, 0, 1):
            if da or db:
                best = np.minimum(best, np.abs(z0 - da - db * tau))
    out = best * scale
    return float(out) if out.ndim == 0 else out


def lattice_distance(z, curve: Curve, scale: float = 1.0):
    return lattice_distance_raw(z, curve.tau, scale)


# ---------------------------------------------------------------------------
# theta series


def _theta_series(z0, tau, nterms, order):
    """theta and its first ``order`` derivatives at already-reduced points."""
    w = np.exp(1j * np.pi * z0)
    w2 = w * w
    winv = 1.0 / w
    w2inv = winv * winv
    e_pos, e_neg = w, winv  # exp(+-i (2n+1) pi z0)
    out = [np.zeros_like(z0) for _ in range(order + 1)]
    for n in range(nterms):
        k = (2 * n + 1) * np.pi
        c = 2.0 * (-1) ** n * np.exp(1j * np.pi * tau * (n + 0.5) ** 2)
        if c == 0:
            break
        s = (e_pos - e_neg) / 2j
        co = (e_pos + e_neg) / 2
        out[0] += c * s
        if order >= 1:
            out[1] += (c * k) * co
        if order >= 2:
            out[2] -= (c * k * k) * s
        if order >= 3:
            out[3] -= (c * k ** 3) * co
        e_pos = e_pos * w2
        e_neg = e_neg * w2inv
    return out


def _check_finite(z):
    z = np.asarray(z, dtype=complex)
    if not np.all(np.isfinite(z)):
        raise InvalidInputError("non-finite argument")
    return z


def theta_batch(z, curve: Curve):
    """Unchecked vectorized theta; zeros on the lattice are returned as is."""
    z = np.asarray(z, dtype=complex)
    tau = curve.tau
    z0, a, b = _reduce_centred(z, tau)
    (th,) = _theta_series(z0, tau, curve.n_terms, 0)
    log_factor = 1j * np.pi * (a + b) - 1j * np.pi * (b * b * tau + 2 * b * z0)
    return np.exp(log_factor) * th


def zlog_batch(z, curve: Curve):
    """Unchecked vectorized Z = theta'/theta."""
    z = np.asarray(z, dtype=complex)
    z0, _, b = _reduce_centred(z, curve.tau)
    th, th1 = _theta_series(z0, curve.tau, curve.n_terms, 1)
    return th1 / th - TWO_PI_I * b


def wp_batch(z, curve: Curve):
    """Unchecked vectorized (wp, wp') via theta logarithmic derivatives."""
    z = np.asarray(z, dtype=complex)
    z0, _, _ = _reduce_centred(z, curve.tau)
    th, th1, th2, th3 = _theta_series(z0, curve.tau, curve.n_terms, 3)
    r1 = th1 / th
    r2 = th2 / th
    r3 = th3 / th
    wp = -(r2 - r1 * r1) + curve.wp_shift
    wpp = -(r3 - 3 * r2 * r1 + 2 * r1 ** 3)
    return wp, wpp


def _scalar(x):
    x = np.asarray(x)
    return complex(x) if x.ndim == 0 else x


def theta(z, curve: Curve):
    """theta_11(z | tau) in the sine-series normalization (see module docstring)."""
    z = _check_finite(z)
    return _scalar(theta_batch(z, curve))


def theta_tilde(z, a, curve: Curve):
    """theta(z - a) / theta(-a); equals 1 at z = 0 and 0 at z = a."""
    z = _check_finite(z)
    a = _check_finite(a)
    d = lattice_distance(a, curve)
    if np.any(np.asarray(d) < curve.eps_sing):
        raise SingularArgumentError("theta_tilde: a lies on the lattice", float(np.min(d)))
    return _scalar(theta_batch(z - a, curve) / theta_batch(-a, curve))


def z_logderiv(t, curve: Curve):
    """Z(t) = theta'(t)/theta(t), from the term-wise differentiated series."""
    t = _check_finite(t)
    d = lattice_distance(t, curve)
    if np.any(np.asarray(d) < curve.eps_sing):
        raise SingularArgumentError("Z has a pole on the lattice", float(np.min(d)))
    return _scalar(zlog_batch(t, curve))


def wp_pair(z, curve: Curve):
    """(wp(z), wp'(z))."""
    z = _check_finite(z)
    d = lattice_distance(z, curve)
    if np.any(np.asarray(d) < curve.eps_sing):
        raise SingularArgumentError("wp has a pole on the lattice", float(np.min(d)))
    wp, wpp = wp_batch(z, curve)
    return _scalar(wp), _scalar(wpp)


def e_values(curve: Curve):
    """wp at the half periods 1/2, tau/2, (1+tau)/2."""
    wp, _ = wp_batch(np.array([0.5, curve.tau / 2, (1 + curve.tau) / 2]), curve)
    return tuple(complex(v) for v in wp)


# ---------------------------------------------------------------------------
# invariants


def invariants_from_tau(tau):
    """(g2, g3) of the lattice Z + tau Z from the Eisenstein series E4, E6."""
    tau = complex(tau)
    if not (math.isfinite(tau.real) and math.isfinite(tau.imag)) or tau.imag <= 0:
        raise InvalidInputError(f"tau={tau!r} must lie in the upper half-plane")
    q = np.exp(2j * np.pi * tau)
    # |q|^n below 1e-20 relative to the leading term
    nmax = max(8, int(math.ceil(46.0 / (2 * math.pi * tau.imag))) + 2)
    n = np.arange(1, nmax + 1, dtype=float)
    qn = q ** n
    lam = qn / (1 - qn)
    e4 = 1 + 240 * np.sum(n ** 3 * lam)
    e6 = 1 - 504 * np.sum(n ** 5 * lam)
    g2 = 4 * np.pi ** 4 / 3 * e4
    g3 = 8 * np.pi ** 6 / 27 * e6
    return complex(g2), complex(g3)


# ---------------------------------------------------------------------------
# inverse of wp


@lru_cache(maxsize=32)
def _seed_table(curve: Curve, n: int = 64):
    idx = (np.arange(n) + 0.5) / n
    al, be = np.meshgrid(idx, idx, indexing="ij")
    z = (al + be * curve.tau).ravel()
    wp, _ = wp_batch(z, curve)
    return z, wp


def _pick_sign_rep(z, curve: Curve) -> complex:
    """Of {z, -z} reduced to the unit cell, the lexicographically smaller (Re, Im)."""
    z1, _, _ = reduce_to_cell(z, curve)
    z2, _, _ = reduce_to_cell(-z, curve)
    return z1 if (z1.real, z1.imag) <= (z2.real, z2.imag) else z2


def wp_inverse(c, curve: Curve, tol: float | None = None, max_iter: int = 60) -> complex:
    """A point z of the unit cell with wp(z) = c; the sign ambiguity z <-> -z is
    resolved by ``_pick_sign_rep``."""
    c = complex(c)
    if not (math.isfinite(c.real) and math.isfinite(c.imag)):
        raise InvalidInputError("wp_inverse needs a finite value")
    tol = curve.tol if tol is None else tol
    scale = max(1.0, abs(c))

    if abs(c) > 1e6:
        seeds = [1.0 / np.sqrt(c)]
    else:
        zs, wps = _seed_table(curve)
        order = np.argsort(np.abs(wps - c), kind="stable")[:6]
        seeds = list(zs[order])

    best_z, best_res = None, np.inf
    for z in seeds:
        z = complex(z)
        for _ in range(max_iter):
            wp, wpp = wp_batch(np.array([z]), curve)
            res = wp[0] - c
            if abs(res) <= 1e-3 * tol * scale or wpp[0] == 0:
                break
            step = res / wpp[0]
            z -= step
            if abs(step) < 1e-17 * max(1.0, abs(z)):
                break
        wp, _ = wp_batch(np.array([z]), curve)
        res = abs(wp[0] - c)
        if res < best_res:
            best_z, best_res = z, res
        if best_res <= 1e-3 * tol * scale:
            break
    if best_res > tol * scale:
        raise NoConvergenceError(f"wp_inverse({c}) did not converge", best_res / scale)
    return _pick_sign_rep(best_z, curve)
