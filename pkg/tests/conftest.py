import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sandlab.experiments import corner_drain_boundaries  # noqa: E402
from sandlab.sandpile import Boundaries, Boundary  # noqa: E402


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "acceptance: full-scale acceptance criteria (slow)")


@pytest.fixture
def fig_boundaries() -> Boundaries:
    return corner_drain_boundaries()


@pytest.fixture
def all_open() -> Boundaries:
    return Boundaries.all_open()
