from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ellhecke.elliptic import (
    Curve,
    invariants_from_tau,
    lattice_distance,
    reduce_to_cell,
    theta,
    theta_tilde,
    wp_inverse,
    wp_pair,
    z_logderiv,
)
from ellhecke.errors import InvalidInputError, SingularArgumentError

from .conftest import TAU_HEX, TAU_MAIN

coord = st.floats(-1.0, 1.0, allow_nan=False)


def direct_theta(z, tau, nterms=60):
    # plain sine series, no argument reduction
    return sum(2 * (-1) ** n * np.exp(1j * np.pi * tau * (n + 0.5) ** 2)
               * np.sin((2 * n + 1) * np.pi * z) for n in range(nterms))


def mp_theta(z, tau):
    q = mpmath.exp(1j * mpmath.pi * tau)
    return complex(mpmath.jtheta(1, mpmath.pi * z, q))


def mp_wp(z, tau):
    # wp from Jacobi thetas on the lattice Z + tau Z
    q = mpmath.exp(1j * mpmath.pi * tau)
    t2, t3 = mpmath.jtheta(2, 0, q), mpmath.jtheta(3, 0, q)
    t1, t4 = mpmath.jtheta(1, mpmath.pi * z, q), mpmath.jtheta(4, mpmath.pi * z, q)
    return complex(mpmath.pi ** 2 * (t2 * t3 * t4 / t1) ** 2
                   - mpmath.pi ** 2 / 3 * (t2 ** 4 + t3 ** 4))


def test_theta_zero_on_lattice(curve):
    assert abs(theta(0, curve)) < 1e-15
    assert abs(theta(1 + curve.tau, curve)) < 1e-12


def test_theta_shift_by_one(curve):
    z = 0.23 + 0.11j
    assert abs(theta(z + 1, curve) + theta(z, curve)) < 1e-12


def test_theta_against_direct_series(square):
    z = 0.37 + 0.21j
    ref = direct_theta(z, 1j)
    assert abs(theta(z, square) - ref) < 1e-12
    assert abs(theta(z, square) - mp_theta(z, 1j)) < 1e-12


@given(coord, coord)
def test_theta_matches_mpmath_far_from_cell(a, b):
    c = Curve.from_tau(TAU_MAIN)
    z = 2.5 * a + 2.5 * b * c.tau
    ref = mp_theta(z, c.tau)
    assert abs(theta(z, c) - ref) <= 1e-11 * max(1.0, abs(ref))


def test_theta_tilde(square):
    a = 0.1 + 0.2j
    assert abs(theta_tilde(0, a, square) - 1) < 1e-14
    assert abs(theta_tilde(a, a, square)) < 1e-14
    ref = mp_theta(0.4 - a, 1j) / mp_theta(-a, 1j)
    assert abs(theta_tilde(0.4, a, square) - ref) < 1e-12
    with pytest.raises(SingularArgumentError):
        theta_tilde(0.3, 1.0, square)


def test_z_logderiv_parity_and_periods(curve):
    t = 0.3 + 0.2j
    z = z_logderiv(t, curve)
    assert abs(z_logderiv(-t, curve) + z) < 1e-12
    assert abs(z_logderiv(t + 1, curve) - z) < 1e-12
    assert abs(z_logderiv(t + curve.tau, curve) - z + 2j * np.pi) < 1e-12
    with pytest.raises(SingularArgumentError):
        z_logderiv(curve.tau, curve)


def test_z_logderiv_is_theta_log_derivative(curve):
    t, h = 0.17 + 0.31j, 1e-5
    fd = (theta(t + h, curve) - theta(t - h, curve)) / (2 * h) / theta(t, curve)
    assert abs(z_logderiv(t, curve) - fd) < 1e-8


def test_wp_against_mpmath(curve):
    for z in (0.13 + 0.4j, 0.41 - 0.2j, 0.05 + 0.02j):
        wp, _ = wp_pair(z, curve)
        ref = mp_wp(z, curve.tau)
        assert abs(wp - ref) <= 1e-10 * max(1.0, abs(ref))


def test_wp_parity_and_period(curve):
    z = 0.21 + 0.33j
    wp, dwp = wp_pair(z, curve)
    wm, dwm = wp_pair(-z, curve)
    assert abs(wp - wm) < 1e-10 and abs(dwp + dwm) < 1e-9
    assert abs(wp_pair(z + curve.tau, curve)[0] - wp) < 1e-10 * abs(wp)


def test_wp_differential_equation_at_random_points(curve):
    rng = np.random.default_rng(3)
    for _ in range(100):
        z = rng.uniform(-1, 1) + rng.uniform(-1, 1) * curve.tau
        if lattice_distance(z, curve) < 0.05:
            continue
        wp, dwp = wp_pair(z, curve)
        lhs, rhs = dwp ** 2, 4 * wp ** 3 - curve.g2 * wp - curve.g3
        assert abs(lhs - rhs) <= 1e-10 * max(1.0, abs(lhs))


def test_invariants_special_lattices():
    g2, g3 = invariants_from_tau(1j)
    assert abs(g3) < 1e-10
    # square lattice: g2 = Gamma(1/4)^8 / (16 pi^2)
    assert abs(g2 - math.gamma(0.25) ** 8 / (16 * math.pi ** 2)) < 1e-10 * abs(g2)
    g2h, g3h = invariants_from_tau(TAU_HEX)
    assert abs(g2h) < 1e-9
    with pytest.raises(InvalidInputError):
        invariants_from_tau(0.3 - 1.1j)


def test_invariants_match_mpmath_wp_expansion(curve):
    # Laurent coefficient: wp(z) = 1/z^2 + g2 z^2 / 20 + ...
    z = 1e-2
    approx = (mp_wp(z, curve.tau) - 1 / z ** 2) * 20 / z ** 2
    assert abs(approx - curve.g2) < 1e-3 * abs(curve.g2)


@given(coord, coord)
def test_wp_inverse_round_trip(a, b):
    c = Curve.from_tau(TAU_MAIN)
    z0 = a + b * c.tau
    if lattice_distance(z0, c) < 0.02 or lattice_distance(2 * z0, c) < 0.02:
        return
    w = wp_pair(z0, c)[0]
    z = wp_inverse(w, c)
    assert min(lattice_distance(z - z0, c), lattice_distance(z + z0, c)) < 1e-8


def test_wp_inverse_pole_and_half_period(square, curve):
    z = wp_inverse(1e12, curve)
    assert lattice_distance(z, curve) < 1e-5
    # e1 = wp(1/2) is a branch value: the preimage is the half period itself
    zh = wp_inverse(wp_pair(0.5, square)[0], square)
    assert lattice_distance(2 * zh, square) < 1e-6
    assert abs(wp_pair(zh, square)[1]) < 1e-4
    zq = wp_inverse(wp_pair(0.25, square)[0], square)
    assert min(lattice_distance(zq - 0.25, square), lattice_distance(zq + 0.25, square)) < 1e-10


def test_reduce_to_cell(curve):
    z = 0.2 + 0.3 * curve.tau
    z0, a, b = reduce_to_cell(z, curve)
    assert abs(z0 - z) < 1e-15 and (a, b) == (0, 0)
    z1, a1, b1 = reduce_to_cell(z + 1 + curve.tau, curve)
    assert abs(z1 - z) < 1e-14 and (a1, b1) == (1, 1)
    z2, a2, b2 = reduce_to_cell(0.7, curve, 0.5)
    assert abs(z2 - 0.2) < 1e-15 and (a2, b2) == (1, 0)


def test_curve_validation():
    with pytest.raises(InvalidInputError):
        Curve.from_tau(1 - 1j)
    with pytest.raises(InvalidInputError):
        Curve.from_tau(1j, marked_points=(0j, 1 + 1j))
