"""Collects the acceptance verdicts and prints them after the run."""

from hypothesis import settings

# reruns of the suite see the same examples
settings.register_profile("repeatable", derandomize=True)
settings.load_profile("repeatable")

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[number])
