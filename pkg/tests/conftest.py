import math

import numpy as np
import pytest

from rydparity.model import PhysicalParams, PulseSchedule, build_geometry, build_parity_target


@pytest.fixture
def params():
    return PhysicalParams()


def random_pulse(rng, m, duration, omega_max, detuning_scale=0.0):
    det = rng.normal(0.0, detuning_scale, m) if detuning_scale else None
    return PulseSchedule(dt=duration / m, phi=rng.uniform(-math.pi, math.pi, m), rabi=omega_max * rng.uniform(0.0, 1.0, m), detuning=det)


@pytest.fixture
def pair(params):
    geo = build_geometry("linear-pair", 2.0)
    return geo, build_parity_target(2, math.pi / 4)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record(criterion: int, ok: bool, detail: str) -> None:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
