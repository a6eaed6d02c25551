import numpy as np
import pytest

from pcdvq.codebooks import build_direction_codebook, lloyd_max_magnitude_codebook
from pcdvq.quantizer import PreparedCodebooks

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


def pytest_runtest_logreport(report):
    number = getattr(report, "criterion_number", None)
    if number is None:
        return
    title = report.criterion_title
    if report.when == "call" or report.failed:
        previous = _criteria.get(number)
        ok = report.passed and (previous is None or previous[1] == "PASS")
        _criteria[number] = (title, "PASS" if ok else "FAIL")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        rep = outcome.get_result()
        rep.criterion_number, rep.criterion_title = marker.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d} [{status}] {title}")
    passed = sum(status == "PASS" for _, status in _criteria.values())
    terminalreporter.write_line(f"{passed}/{len(_criteria)} criteria passed")


@pytest.fixture(scope="session")
def cd10():
    return build_direction_codebook(10, seed=0)


@pytest.fixture(scope="session")
def cr2():
    return lloyd_max_magnitude_codebook(2, k=8, tau=0.9999)


@pytest.fixture(scope="session")
def pc10(cd10, cr2):
    return PreparedCodebooks(cd10, cr2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
