from __future__ import annotations

import numpy as np
import pytest

from qsdlab.model import (
    DomainSpec,
    GridSpec,
    OverdampedLangevin,
    ScalarField,
    VectorField,
    build_generator,
)


def interval_brownian(counts: int = 400):
    """Brownian motion with generator (1/2) d²/dx² killed outside (0, pi)."""
    grid = GridSpec(DomainSpec(((0.0, np.pi),)), (counts,))
    op = build_generator(OverdampedLangevin(potential=ScalarField("0")), grid)
    return grid, op


def sine_masses(grid, power: int = 1) -> np.ndarray:
    m = np.sin(grid.nodes[:, 0]) ** power
    return m / m.sum()


@pytest.fixture(scope="session")
def brownian():
    return interval_brownian(400)


@pytest.fixture(scope="session")
def brownian_coarse():
    return interval_brownian(100)


@pytest.fixture(scope="session")
def quartic_op():
    """Gradient drift with U = x²/2 + x⁴/4 on (-1, 1.5), central scheme."""
    grid = GridSpec.from_spacing(DomainSpec(((-1.0, 1.5),)), 0.025)
    proc = OverdampedLangevin(potential=ScalarField("x**2/2 + x**4/4"))
    return build_generator(proc, grid)


@pytest.fixture(scope="session")
def rotating_op():
    """Non-gradient 2D drift on a disc-shaped domain."""
    dom = DomainSpec(((-1.0, 1.0), (-1.0, 1.0)), mask="1 - x**2 - y**2")
    grid = GridSpec(dom, (30, 30))
    proc = OverdampedLangevin(drift=VectorField(("-x - 2*y", "2*x - y")))
    return build_generator(proc, grid)



CRITERIA: list[str] = []


def report_criterion(number: int, passed: bool, detail: str) -> None:
    """Record one acceptance line; all lines are repeated in the terminal summary."""
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
    CRITERIA.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
