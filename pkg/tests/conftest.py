import numpy as np
import pytest

from cop_place.gain import GainModel
from cop_place.grid import build_constant_matrices, load_case
from cop_place.measurements import sample_scada


@pytest.fixture(scope="session")
def two_bus():
    return load_case("two_bus")


@pytest.fixture(scope="session")
def mats2(two_bus):
    return build_constant_matrices(two_bus)


@pytest.fixture(scope="session")
def ieee14():
    return load_case("ieee14")


@pytest.fixture(scope="session")
def mats14(ieee14):
    return build_constant_matrices(ieee14)


@pytest.fixture(scope="session")
def scada14(ieee14):
    return sample_scada(ieee14, 0.15, np.random.default_rng(0))


@pytest.fixture(scope="session")
def model14(mats14, scada14):
    return GainModel(mats14, *scada14)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""
    lines = request.config.stash[_CRITERIA]
    name = request.node.name

    def record(ok, detail=""):
        lines[name] = f"{'PASS' if ok else 'FAIL'}  {name}  {detail}".rstrip()
        return ok

    yield record
    if name not in lines:
        lines[name] = f"FAIL  {name}  (error before a verdict was recorded)"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_CRITERIA, {})
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(lines):
        terminalreporter.write_line(lines[key])
