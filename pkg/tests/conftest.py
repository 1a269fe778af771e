import numpy as np
import pytest

from cmvit import data as D
from cmvit.tensor import precision


_acceptance: dict[str, bool] = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    name = report.nodeid.split("::test_criterion_")[1].split("[")[0]
    if report.when == "call" or report.failed:
        _acceptance[name] = _acceptance.get(name, True) and report.passed


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_acceptance):
        number, _, title = name.partition("_")
        verdict = "PASS" if _acceptance[name] else "FAIL"
        terminalreporter.write_line(f"criterion {int(number):2d} {title.replace('_', ' ')}: {verdict}")


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    manifest = D.gen_synthetic(8, 32, 1, root)
    return root, manifest
