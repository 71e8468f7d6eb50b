import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from shen import COEFFICIENT_PRESETS, GridSpec, SolverConfig, SpectralMeasure

settings.register_profile("shen", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("shen")


def small_config(coeffs="sine-diffusion", measure=None, n=32, L=8.0, dt=0.005, steps=40, u0=None):
    grid = GridSpec(n, L, 1)
    measure = SpectralMeasure.white(1) if measure is None else measure
    if u0 is None:
        x = grid.coordinates()[0]
        u0 = 0.5 * np.exp(-((x - L / 2) ** 2) / 2)
    return SolverConfig(grid, measure, COEFFICIENT_PRESETS[coeffs], u0, dt, steps, grid.center())


@pytest.fixture
def cfg():
    return small_config()


# one line per acceptance criterion, printed after the run
CRITERIA: dict[int, tuple[bool, str]] = {}


def record(number: int, passed: bool, detail: str) -> bool:
    CRITERIA[number] = (bool(passed), detail)
    print(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
    return passed


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, detail = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
