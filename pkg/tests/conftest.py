import os

import numpy as np
import pytest

from resqos.dataset import load_wsdream
from resqos.model import VocabSizes
from resqos.synthetic import synthesize, write_wsdream_dir

_acceptance_lines = []


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("synth")
    write_wsdream_dir(path, *synthesize(n_users=40, n_services=120, n_countries=6, seed=3))
    return str(path)


@pytest.fixture(scope="session")
def synth_data(synth_dir):
    return load_wsdream(synth_dir)


@pytest.fixture
def tiny_sizes():
    return VocabSizes(n_users=5, n_services=7, user_country=3, user_as=4, service_country=2, service_as=3)


def random_batch(rng, sizes, k, n):
    from resqos.features import FeatureBatch

    def dist():
        p = rng.random((n, k))
        return p / p.sum(axis=1, keepdims=True)

    return FeatureBatch(
        rng.integers(0, sizes.n_users, n),
        rng.integers(0, sizes.n_services, n),
        rng.integers(0, sizes.user_country, n),
        rng.integers(0, sizes.user_as, n),
        rng.integers(0, sizes.service_country, n),
        rng.integers(0, sizes.service_as, n),
        dist(),
        dist(),
    )


@pytest.fixture
def make_batch():
    return random_batch


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    if "test_acceptance.py" not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    _acceptance_lines.append(f"{report.outcome.upper():7s} {name}")


def pytest_terminal_summary(terminalreporter):
    if _acceptance_lines:
        terminalreporter.section("acceptance criteria")
        for line in _acceptance_lines:
            terminalreporter.write_line(line)


def wsdream_dir():
    """Location of the real WS-DREAM files, or None when they are not available."""
    here = os.path.dirname(__file__)
    for candidate in (os.environ.get("RESQOS_DATA_DIR"), os.path.join(here, "..", "data", "wsdream")):
        if candidate and os.path.isfile(os.path.join(candidate, "rtMatrix.txt")):
            return candidate
    return None


np.seterr(over="raise", invalid="raise", divide="raise")
