import numpy as np
import pytest

from losperc.geometry import RngStream, Window
from losperc.pvt import build_tessellation, sample_seeds


@pytest.fixture(scope="session")
def medium_tessellation():
    """About 400 cells at unit seed intensity, clipped to [0, 20]^2."""
    w = Window.from_bounds(0.0, 0.0, 20.0, 20.0)
    seeds = sample_seeds(w.dilated(3.0), 1.0, RngStream(2024, 0))
    return build_tessellation(seeds, w)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion (echoed in the terminal summary)."""
    def report(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
