import numpy as np
import pytest

from facetscale.synthetic import default_items, simulate_study


@pytest.fixture(scope="session")
def items5():
    return default_items(10, 5, seed=1)


@pytest.fixture(scope="session")
def study(items5):
    """200 comments x 10 items x 50 raters through a generated plan."""
    return simulate_study(items5, 200, 50, seed=0)


@pytest.fixture(scope="session")
def fitted(study, items5):
    from facetscale.estimation import estimate

    return estimate(study.responses, items5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
