"""Shared test plumbing: acceptance criteria report lines.

Each acceptance test registers exactly one line; they are echoed in the
terminal summary so the pass/fail status of every criterion is visible in
one place regardless of output capturing.
"""

_criterion_lines = {}


def record_criterion(number: int, description: str, failures: list) -> None:
    status = "PASS" if not failures else "FAIL"
    _criterion_lines[number] = f"criterion {number} ({description}): {status}"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_lines:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_criterion_lines):
        terminalreporter.write_line(_criterion_lines[number])
