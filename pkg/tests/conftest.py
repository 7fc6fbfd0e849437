import numpy as np
import pytest

from pilotwave.grids import ComplexGrid, GridSpec

ACCEPTANCE_LINES: list[str] = []


def gaussian_packet(spec: GridSpec, center=0.0, width=0.5, k=0.0) -> ComplexGrid:
    x = spec.axis(0)
    return ComplexGrid(spec, np.exp(-((x - center) ** 2) / (4 * width**2) + 1j * k * x)).normalized()


@pytest.fixture
def line_spec():
    return GridSpec.line(40.0, 1024)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
