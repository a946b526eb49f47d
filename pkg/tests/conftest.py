from __future__ import annotations

import cmath
import math

import pytest
from hypothesis import HealthCheck, settings

from ellhecke.elliptic import Curve

settings.register_profile(
    "ellhecke", deadline=None, derandomize=True, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("ellhecke")

TAU_MAIN = 0.3 + 1.1j
TAU_SQUARE = 1j
TAU_HEX = cmath.exp(1j * math.pi / 3)


@pytest.fixture(scope="session")
def curve():
    return Curve.from_tau(TAU_MAIN)


@pytest.fixture(scope="session")
def square():
    return Curve.from_tau(TAU_SQUARE)


@pytest.fixture(scope="session")
def hexagonal():
    return Curve.from_tau(TAU_HEX)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
