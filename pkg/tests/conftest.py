import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from _util import CRITERIA_LINES  # noqa: E402


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERIA_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
