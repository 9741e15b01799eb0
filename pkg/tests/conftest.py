import numpy as np
import pytest

from eht_lab.config import load_config
from eht_lab.belief_space import StateSpace


def space_for(name):
    cfg = load_config(name)
    p = cfg.parameters
    return cfg, StateSpace(cfg.build_game(), p.M, p.sigma, distance_mode=p.distance_mode)


@pytest.fixture(scope="session")
def stag_hunt():
    return space_for("stag_hunt")


@pytest.fixture(scope="session")
def bos_symmetric():
    return space_for("bos_symmetric")


@pytest.fixture(scope="session")
def bos_asymmetric():
    return space_for("bos_asymmetric")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
