import numpy as np
import pytest
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent
SCENARIOS = REPO / "scenarios"


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


@pytest.fixture
def scenarios_dir():
    return SCENARIOS


def random_measure(rng, n, d, spread=1.0):
    from wviab.measures import DiscreteMeasure
    return DiscreteMeasure(rng.normal(size=(n, d)) * spread,
                           rng.dirichlet(np.ones(n)))
