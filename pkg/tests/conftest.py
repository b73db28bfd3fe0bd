"""Shared test plumbing: the acceptance-criteria summary block.

Each acceptance test records exactly one CRITERION line (pass or fail)
before asserting, so the final report always carries a verdict for every
criterion that ran, even when one fails.
"""

from acceptance_report import lines


def pytest_terminal_summary(terminalreporter):
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
