import numpy as np
import pytest

from bdce.channel import ScenarioConfig
from bdce.dictionary import build_dictionary, build_grid


@pytest.fixture(scope="session")
def cfg():
    return ScenarioConfig()


@pytest.fixture(scope="session")
def small_cfg():
    return ScenarioConfig(N=16, Np=4, Nrf=2, Nps=2, L=2)


@pytest.fixture(scope="session")
def desk_dict(cfg):
    return build_dictionary(build_grid(cfg), cfg)


@pytest.fixture(scope="session")
def small_dict(small_cfg):
    return build_dictionary(build_grid(small_cfg), small_cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, passed, detail)``."""
    lines = request.config.stash.setdefault(_CRITERIA, {})

    def report(n, passed, detail):
        line = f"criterion {n:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        lines[n] = line
        print(line)
        return passed
    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
