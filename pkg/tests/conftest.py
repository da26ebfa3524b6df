import os

import pytest

_CRITERIA = []


def pytest_collection_modifyitems(config, items):
    if os.environ.get("OTRANKS_RUN_SLOW") == "1":
        return
    skip = pytest.mark.skip(reason="long-running; set OTRANKS_RUN_SLOW=1")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def criterion():
    """Record one acceptance line, ``PASS``/``FAIL criterion k: detail``."""

    def record(k, ok, detail):
        line = f"{'SKIP' if ok is None else 'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        print(line)
        _CRITERIA.append(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
