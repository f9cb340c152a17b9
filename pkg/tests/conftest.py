import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

# criterion number -> (passed, detail)
CRITERIA: dict[int, tuple[bool, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.skipped:
        return
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        n = mark.args[0]
        detail = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:160]
        CRITERIA[n] = (rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(CRITERIA):
        ok, detail = CRITERIA[n]
        tr.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
