import re
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

_CRITERION = re.compile(r"test_criterion_(\d+)_(\w+)")
_outcomes: dict[int, tuple[str, str, str]] = {}


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m:
        return
    n = int(m.group(1))
    failed = report.failed or (report.when == "call" and report.skipped)
    if report.when == "call" or failed:
        note = dict(report.user_properties).get("detail", "")
        status = "FAIL" if failed else "PASS"
        if n not in _outcomes or status == "FAIL":
            _outcomes[n] = (status, m.group(2).replace("_", " "), note)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_outcomes):
        status, name, note = _outcomes[n]
        line = f"criterion {n} [{status}] {name}"
        terminalreporter.write_line(f"{line}: {note}" if note else line)
