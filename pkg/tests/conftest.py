import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

# (criterion number, passed, detail) recorded by test_acceptance
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(VERDICTS):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
