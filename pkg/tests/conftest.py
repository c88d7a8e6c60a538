import math
from pathlib import Path

import numpy as np
import pytest

from vernier.box_geom import Box3D

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def fixtures():
    return FIXTURES


def random_car(rng, lateral=10.0, depth=(5.0, 50.0)):
    h, w, l = np.maximum(rng.normal([1.52, 1.63, 3.88], [0.08, 0.08, 0.3]), 0.5)
    return Box3D(rng.uniform(-lateral, lateral), 1.65 - h / 2, rng.uniform(*depth),
                 h, w, l, rng.uniform(-math.pi, math.pi))


ACCEPTANCE_LINES = []


def report(criterion, ok, detail):
    """Record and print one acceptance verdict line."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
