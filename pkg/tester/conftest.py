import pytest

from solitonforge.config import Tolerances, WeightSpec
from solitonforge.glue import build_glued, glued_grid


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full acceptance sweeps (deselect with -m 'not slow')")


@pytest.fixture(scope="session")
def spec():
    return WeightSpec(gamma=1.0, delta=0.5)


@pytest.fixture(scope="session")
def glued(spec):
    """Glued datum for n=2, eps=1e-2 at the default spacing."""
    return build_glued(2, 1e-2, glued_grid(1e-2, 1.0 / 128), spec, tolerances=Tolerances())
