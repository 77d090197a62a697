import numpy as np
import pytest

from mffqi.envs import collect_batch, reference_chain
from mffqi.kernels import Config

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        prev = _CRITERIA.get(number, (title, True))[1]
        _CRITERIA[number] = (title, prev and not failed)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number} ({title}): {'PASS' if ok else 'FAIL'}")


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def random_config(rng, action=None, n_agents=None, dim=1, n_actions=2, scale=1.5):
    action = int(rng.integers(n_actions)) if action is None else action
    n_agents = int(rng.integers(1, 7)) if n_agents is None else n_agents
    return Config(action, rng.normal(0.0, scale, size=(n_agents, dim)))


@pytest.fixture(scope="session")
def reference_spec():
    return reference_chain(n_agents=4, gamma=0.9)


@pytest.fixture(scope="session")
def reference_batch(reference_spec):
    return collect_batch(reference_spec, 200)
