from __future__ import annotations

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ellhecke.elliptic import Curve, lattice_distance, theta
from ellhecke.errors import DegenerateError, EllHeckeError
from ellhecke.heckegeom import (
    IDENTITY,
    INVERSION,
    L_factor,
    MobiusMap,
    f_cross,
    f_dp,
    hecke_transform,
    measure_poly,
    mobius_g,
    residue_residuals,
    solve_q,
)
from ellhecke.identities import grid_newton_oracle
from ellhecke.moduli import ModuliPoint, equivalent

from .conftest import TAU_MAIN

P0, X0, S0 = 0.31 + 0.17j, 0.22 + 0.05j, 0.7 + 0.4j
coord = st.floats(-1.0, 1.0, allow_nan=False)


def mp_theta(z, tau):
    q = mpmath.exp(1j * mpmath.pi * tau)
    return mpmath.jtheta(1, mpmath.pi * z, q)


def generic(curve, *zs, tol=0.05):
    return min(lattice_distance(z, curve) for z in zs) >= tol


def test_f_zero_and_value_at_origin(curve):
    assert abs(f_cross(P0, X0 - P0, X0, curve)) < 1e-14
    c0 = (theta(P0 - X0, curve) / theta(P0 + X0, curve)) ** 2
    assert abs(f_cross(P0, 0, X0, curve) - c0) < 1e-13


@given(coord, coord, coord, coord, coord, coord)
def test_f_even_and_elliptic(a, b, c, d, e, g):
    curve = Curve.from_tau(TAU_MAIN)
    p, q, x = a + b * curve.tau, c + d * curve.tau, e + g * curve.tau
    if not generic(curve, q - x - p, q + x + p, q + x - p, q - x + p):
        return
    f = f_cross(p, q, x, curve)
    scale = max(1.0, abs(f))
    assert abs(f_cross(p, -q, x, curve) - f) < 1e-9 * scale
    assert abs(f_cross(p, q + 1 + curve.tau, x, curve) - f) < 1e-9 * scale


def test_solve_q_small_line_goes_to_zero_of_f(curve):
    # s = 1e-8 is inside the default rejection radius, so shrink it for this limit
    sol = solve_q(P0, X0, 1e-8, curve, eps_line=1e-10)
    assert min(lattice_distance(sol.q - (X0 - P0), curve),
               lattice_distance(sol.q + (X0 - P0), curve)) < 1e-6


def test_solve_q_origin_value_gives_q_zero(curve):
    c0 = (theta(P0 - X0, curve) / theta(P0 + X0, curve)) ** 2
    sol = solve_q(P0, X0, c0, curve)
    assert lattice_distance(sol.q, curve) < 1e-6
    assert abs(sol.wp_q) > 1e10


def test_solve_q_matches_grid_oracle(curve):
    sol = solve_q(P0, X0, S0, curve)
    q = grid_newton_oracle(P0, X0, S0, curve)
    assert min(lattice_distance(sol.q - q, curve), lattice_distance(sol.q + q, curve)) < 1e-8
    # frozen output of the 400 x 400 grid + Newton oracle
    assert min(lattice_distance(sol.q - Q_ORACLE, curve),
               lattice_distance(sol.q + Q_ORACLE, curve)) < 1e-8


Q_ORACLE = 0.44784046523537613 + 0.7375169082929025j


def test_solve_q_rejects_degenerate_lines(curve):
    for s in (0, float("inf"), 1e-9):
        with pytest.raises(DegenerateError):
            solve_q(P0, X0, s, curve)


@given(coord, coord, coord, coord, st.floats(0.2, 2.0), st.floats(0, 2 * np.pi))
def test_solve_q_invariants(a, b, c, d, r, phi):
    curve = Curve.from_tau(TAU_MAIN)
    p, x = a + b * curve.tau, c + d * curve.tau
    s = r * np.exp(1j * phi)
    if not generic(curve, p, x, p + x, p - x, 2 * p, 2 * x):
        return
    sol = solve_q(p, x, s, curve)
    if not generic(curve, 2 * sol.q, sol.q - p - x, sol.q + p + x, sol.q - x + p, sol.q + x - p):
        return
    assert lattice_distance(sol.r1 + sol.r2 - 2 * x, curve) < 1e-10
    assert abs(f_cross(p, sol.q, x, curve) - s) < 1e-9 * max(1, abs(s)) or \
        abs(f_cross(p, sol.q, x, curve) - s) / abs(s) < 1e-6
    assert max(residue_residuals(sol, p, x, curve)) < 1e-9


def test_mobius_inverse_pair(curve):
    q = solve_q(P0, X0, S0, curve).q
    for t in (0.37, 0.1 + 0.5j, -0.4 + 0.2j):
        g = mobius_g(X0, P0, q, t, curve)
        h = mobius_g(X0, q, P0, t, curve)
        assert (g @ h).distance(IDENTITY) < 1e-9


def test_mobius_minus_q_inverts_lines(curve):
    q = solve_q(P0, X0, S0, curve).q
    t = 0.37
    g = mobius_g(X0, P0, q, t, curve)
    gm = mobius_g(X0, P0, -q, t, curve)
    assert gm.distance(INVERSION @ g) < 1e-12
    for y in (0.3 + 0.1j, -2.0 + 1j, 5j):
        assert abs(gm.apply(y) - 1 / g.apply(y)) < 1e-10 * max(1, abs(gm.apply(y)))


def test_mobius_inverts_gluing_matrix(curve):
    # M(z) in root form (columns from the sections at r1 = x + q, r2 = x - q),
    # evaluated with mpmath thetas; mobius_g must be its inverse in PGL2
    q = solve_q(P0, X0, S0, curve).q
    r1, r2 = X0 + q, X0 - q
    th = lambda z: mp_theta(z, curve.tau)  # noqa: E731
    for t in (0.37, 0.1 + 0.5j):
        M = MobiusMap(
            complex(-th(t + r1 - 2 * X0 - P0) / th(r1 - 2 * X0 - P0)),
            complex(th(t + r2 - 2 * X0 - P0) / th(r2 - 2 * X0 - P0)),
            complex(-th(t + r1 - 2 * X0 + P0) / th(r1 - 2 * X0 + P0)),
            complex(th(t + r2 - 2 * X0 + P0) / th(r2 - 2 * X0 + P0)),
        )
        assert (mobius_g(X0, P0, q, t, curve) @ M).distance(IDENTITY) < 1e-9


def test_determinant_identity(curve):
    rng = np.random.default_rng(5)
    q = solve_q(P0, X0, S0, curve).q
    L = L_factor(P0, q, X0, curve)
    for _ in range(50):
        t = rng.uniform(-1, 1) + rng.uniform(-1, 1) * curve.tau
        det = mobius_g(X0, P0, q, t, curve).det
        want = L * theta(t, curve) * theta(t - 2 * X0, curve)
        assert abs(det - want) <= 1e-9 * max(1, abs(det))


def test_L_factor_symmetry_and_zero(curve):
    q = 0.41 + 0.29j
    assert abs(L_factor(P0, q, X0, curve) - L_factor(q, P0, X0, curve)) < 1e-10 * abs(L_factor(P0, q, X0, curve))
    assert abs(L_factor(P0, 0.5, X0, curve)) < 1e-12


def test_hecke_transform_m0(curve):
    out, sol = hecke_transform(ModuliPoint.make(P0), X0, S0, curve)
    assert equivalent(out, ModuliPoint.make(solve_q(P0, X0, S0, curve).q), curve)


def test_hecke_transform_sign_of_q_irrelevant():
    curve = Curve.from_tau(TAU_MAIN, marked_points=(0j, 0.37, 0.12 + 0.6j))
    pt = ModuliPoint.make(P0, [0.4 + 0.3j, -1.2 + 0.5j])
    q = solve_q(P0, X0, S0, curve).q
    ts = curve.marked_points[1:]
    plus = ModuliPoint.make(q, [mobius_g(X0, P0, q, t, curve).apply(y) for t, y in zip(ts, [0.4 + 0.3j, -1.2 + 0.5j])])
    minus = ModuliPoint.make(-q, [mobius_g(X0, P0, -q, t, curve).apply(y) for t, y in zip(ts, [0.4 + 0.3j, -1.2 + 0.5j])])
    assert equivalent(plus, minus, curve)
    out, _ = hecke_transform(pt, X0, S0, curve)
    assert equivalent(out, plus, curve)


def test_hecke_transform_m2_against_direct_formula():
    tau = 1j
    t1, t2 = 0.37, 0.12 + 0.6j
    curve = Curve.from_tau(tau, marked_points=(0j, t1, t2))
    rng = np.random.default_rng(11)
    p = complex(rng.uniform(0.05, 0.45) + rng.uniform(0.05, 0.2) * tau)
    x = complex(rng.uniform(0.05, 0.45) + rng.uniform(0.05, 0.2) * tau)
    s, ys = 0.9 - 0.6j, [0.4 + 0.3j, -1.2 + 0.5j]
    th = lambda z: mp_theta(z, tau)  # noqa: E731
    f = lambda q: th(p + q - x) * th(q + x - p) / (th(q - x - p) * th(q + x + p))  # noqa: E731
    # oracle q: coarse grid minimum of |f - s|, then mpmath secant refinement
    g = (np.arange(60) + 0.5) / 60
    best = min(((complex(a + b * tau)) for a in g for b in g),
               key=lambda q: abs(complex(f(q)) - s) if abs(complex(th(q - x - p) * th(q + x + p))) > 1e-6 else np.inf)
    q = complex(mpmath.findroot(lambda z: f(z) - s, mpmath.mpc(best)))
    tt = lambda z, a: th(z - a) / th(-a)  # noqa: E731
    zs = [complex((tt(t, -p + x + q) * y - tt(t, p + x + q)) / (tt(t, -p + x - q) * y - tt(t, p + x - q)))
          for t, y in zip((t1, t2), ys)]
    out, _ = hecke_transform(ModuliPoint.make(p, ys), x, s, curve)
    assert equivalent(out, ModuliPoint.make(q, zs), curve, tol=1e-8)


def test_measure_poly_fit_and_roots(curve):
    md = measure_poly(P0, X0, curve)
    assert md.residual < 1e-9
    assert abs(md.P_coeffs[2]) > 1e-6
    for v in md.roots():
        q = solve_q(P0, X0, complex(v), curve).q
        # f'_p vanishes where f hits a root of P: -1/f'_p has a pole there
        assert abs(f_dp(P0, q, X0, curve)) < 1e-7 * max(1, abs(md.P_coeffs[0]))


def test_measure_poly_degenerate_x(curve):
    with pytest.raises(EllHeckeError):
        measure_poly(P0, 1e-12, curve)
