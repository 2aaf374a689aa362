import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_acceptance: list[tuple[str, str, float]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance.py" in report.nodeid and report.when == "call":
        name = report.nodeid.split("::")[-1]
        _acceptance.append((name, "PASS" if report.passed else "FAIL", report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, secs in _acceptance:
        terminalreporter.write_line(f"{status}  {name}  ({secs:.1f} s)")
