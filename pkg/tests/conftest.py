import numpy as np
import pytest

from sgas.datasets import make_blobs, make_spirals, split
from sgas.search import SearchConfig


@pytest.fixture(scope="session")
def tiny_spirals():
    return split(make_spirals(40, 3, 0.15, seed=0, width=8, turns=1.0), seed=0)


@pytest.fixture(scope="session")
def tiny_blobs():
    return split(make_blobs(40, 3, 0.3, seed=0, width=8), seed=0)


@pytest.fixture
def tiny_config():
    # M=2 (4 decisions) on a one-cell width-8 supernet keeps a full search under a second
    return SearchConfig(epochs=8, warm_up_epochs=1, decision_interval=1, history_window=2,
                        batch_size=16, cells=1, width=8, n_intermediate=2, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE: list[tuple[str, str, float]] = []
_SETUP_SECONDS: dict[str, float] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if rep.when == "setup" and rep.passed:
        # module fixtures do the heavy lifting for some criteria; count their time too
        _SETUP_SECONDS[item.nodeid] = rep.duration
    elif rep.when == "call" or rep.when == "setup":
        status = "PASS" if rep.passed else ("SKIP" if rep.skipped else "FAIL")
        _ACCEPTANCE.append((marker.args[0], status, rep.duration + _SETUP_SECONDS.get(item.nodeid, 0.0)))


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): acceptance criterion with a one-line verdict")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, status, seconds in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"{status}  {label}  ({seconds:.1f}s)")
