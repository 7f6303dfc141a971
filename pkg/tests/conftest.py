import numpy as np
import pytest

from cwsep.audio import index_dataset
from cwsep.synthetic import make_toy_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_toy_dataset(root, n_songs=2, seconds=4.0, sample_rate=8000, seed=7)
    return root


@pytest.fixture(scope="session")
def toy_indices(toy_root):
    return index_dataset(toy_root, "train"), index_dataset(toy_root, "valid")


# -- acceptance reporting ---------------------------------------------------------

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    if report.when == "call" or report.failed or report.skipped:
        previous = _criteria.get(number, (title, "PASS"))[1]
        status = "PASS" if report.passed and previous == "PASS" else (
            "SKIP" if report.skipped else "FAIL")
        _criteria[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number} [{status}] {title}")
