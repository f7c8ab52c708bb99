"""Shared pytest hooks: collect and print the acceptance verdict lines."""

ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    """Store a one-line verdict and echo it (visible with ``-s``)."""
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)
