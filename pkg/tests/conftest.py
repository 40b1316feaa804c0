"""Shared test plumbing: collect acceptance-criterion verdict lines and echo
them in the terminal summary so they survive output capturing."""

CRITERION_LINES = []


def record_criterion(number, description, passed, detail=""):
    verdict = "PASS" if passed else "FAIL"
    line = f"CRITERION {number} [{verdict}] {description}"
    if detail:
        line += f" -- {detail}"
    CRITERION_LINES.append(line)
    print(line, flush=True)
    return line


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(CRITERION_LINES):
            terminalreporter.write_line(line)
