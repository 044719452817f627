import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_case(rng, h=None, w=None, c=None, p=0.4):
    h = h or int(rng.integers(1, 9))
    w = w or int(rng.integers(1, 9))
    c = c or int(rng.choice([1, 3]))
    image = rng.uniform(0, 1, size=(h, w, c))
    region = rng.uniform(size=(h, w)) < p
    infill = rng.uniform(0, 1, size=(h, w, c))
    return image, region, infill


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
