import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_CRITERIA = {}


@pytest.fixture
def criterion(request):
    """Record one acceptance line; call as ``criterion(n, ok, detail)``."""
    def record(number, ok, detail=""):
        _CRITERIA[number] = ("PASS" if ok else "FAIL", detail)
        assert ok, f"criterion {number}: {detail}"
    return record


def pytest_runtest_logreport(report):
    if report.skipped and "test_acceptance" in report.nodeid and report.when in ("setup", "call"):
        name = report.nodeid.split("::")[-1]
        if name.startswith("test_criterion_"):
            number = int(name.split("_")[2])
            reason = report.longrepr[2] if isinstance(report.longrepr, tuple) else ""
            _CRITERIA.setdefault(number, ("SKIP", reason.replace("Skipped: ", "")))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        status, detail = _CRITERIA[number]
        terminalreporter.write_line(f"criterion {number:2d} ... {status}  {detail}")
