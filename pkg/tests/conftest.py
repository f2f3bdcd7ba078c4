from __future__ import annotations

import numpy as np
import pytest

from gridcal.cases import builtin_case
from gridcal.netmodel import Branch, Bus, GridCase, observed_edges

TRIANGLE_M = """\
function mpc = triangle
mpc.baseMVA = 100.0;
mpc.bus = [
\t1\t3\t0.0\t0\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;
\t2\t1\t60.0\t0\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;
\t3\t1\t40.0\t0\t0\t0\t1\t1\t0\t138\t1\t1.1\t0.9;
];
mpc.gen = [
\t1\t100.0\t0\t300\t-300\t1\t100\t1\t600\t0;
];
mpc.branch = [
\t1\t2\t0\t1.0\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t2\t3\t0\t1.0\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
\t3\t1\t0\t1.0\t0\t0\t0\t0\t0\t0\t1\t-360\t360;
];
"""


@pytest.fixture(scope="session")
def triangle() -> GridCase:
    return builtin_case("triangle")


@pytest.fixture(scope="session")
def bench30() -> GridCase:
    return builtin_case("bench30")


@pytest.fixture(scope="session")
def bench118() -> GridCase:
    return builtin_case("bench118")


@pytest.fixture(scope="session")
def two_bus() -> GridCase:
    """Radial two-bus case: its only branch is a bridge."""
    return GridCase(
        "two_bus",
        100.0,
        (Bus(1, p_gen=50.0), Bus(2, p_load=50.0)),
        (Branch(1, 1, 2, 0.1),),
        slack_bus=1,
    )


@pytest.fixture(scope="session")
def all_sensors_triangle(triangle):
    return observed_edges(triangle, [1, 2, 3])


def random_balanced_injections(case: GridCase, rng: np.random.Generator, scale: float = 1.0):
    p = rng.normal(0.0, scale, size=len(case.buses))
    p[case.bus_index[case.slack_bus]] -= p.sum()
    return p
