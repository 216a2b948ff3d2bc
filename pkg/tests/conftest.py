import numpy as np
import pytest

from dmlcrf import dml_net, hsi_data
from dmlcrf.config import RunConfig
from dmlcrf.pipeline import train_model

_CRITERIA = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict line; printed in the terminal summary."""

    def record(number, passed, detail):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        _CRITERIA.append(f"[{status}] criterion {number}: {detail}")
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in _CRITERIA:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_scene():
    """The default desk-scale scene: 64x64x16, 5 classes."""
    return hsi_data.synth_scene(seed=0)


@pytest.fixture(scope="session")
def trained_lam1(synth_scene):
    cube, labels = synth_scene
    return train_model(cube, labels, RunConfig(lam=1.0, seed=0))


@pytest.fixture(scope="session")
def trained_lam0(synth_scene):
    cube, labels = synth_scene
    return train_model(cube, labels, RunConfig(lam=0.0, seed=0))


@pytest.fixture(scope="session")
def extracted_lam1(trained_lam1):
    return dml_net.extract(trained_lam1.params, trained_lam1.cube)
