import os
import sys

import pytest

os.environ.setdefault("VS_NUM_THREADS", "1")

_LINES: list[str] = []


class Recorder:
    """Collects one PASS/FAIL line per acceptance criterion."""

    def __call__(self, label: str, ok: bool, detail: str = ""):
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f"  [{detail}]" if detail else "")
        _LINES.append(line)
        print(line, file=sys.stderr)
        return ok


@pytest.fixture(scope="session")
def record():
    return Recorder()


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in _LINES:
            terminalreporter.write_line(line)
