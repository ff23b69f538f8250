import numpy as np
import pytest

from taylorac.mesh import build_rectangle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_square_4():
    return build_rectangle(0.0, 0.0, 1.0, 1.0, 4, 4)


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False,
                     help="also run the long acceptance studies")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="long acceptance run; pass --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)
