import json
import time

import pytest

from helpers import ACCEPTANCE_LINES, TIMINGS, run_scenario


@pytest.fixture(scope="session")
def reference_run():
    start = time.monotonic()
    out = run_scenario("reference")
    TIMINGS["reference"] = time.monotonic() - start
    return out


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(name, rows):
        path = tmp_path / name
        path.write_text("".join(json.dumps(r) + "\n" for r in rows))
        return path

    return _write


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
