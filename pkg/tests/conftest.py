import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from synthetic import tiny_config, write_corpus  # noqa: E402

_criteria: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported at the end")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    label = getattr(report, "criterion_label", None)
    if label:
        _criteria[report.nodeid] = (label, report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker:
        rep.criterion_label = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for label, outcome in sorted(_criteria.values()):
        status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[outcome]
        terminalreporter.write_line(f"{status}  {label}")


@pytest.fixture(scope="session")
def corpus_root(tmp_path_factory):
    return write_corpus(tmp_path_factory.mktemp("esc50"))


@pytest.fixture(scope="session")
def tiny_cfg(corpus_root, tmp_path_factory):
    from blinky_aec.config import from_dict

    return from_dict(tiny_config(corpus_root, tmp_path_factory.mktemp("runs")))


@pytest.fixture(scope="session")
def workspace(tiny_cfg):
    from blinky_aec.experiment import Workspace

    return Workspace(tiny_cfg)
