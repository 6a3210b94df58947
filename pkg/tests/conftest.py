"""Collects the acceptance verdict lines and prints them after the run."""

VERDICTS = []


def record(number: int, verdict: str, detail: str) -> str:
    line = f"criterion {number:>2}: {verdict}  {detail}"
    VERDICTS.append((number, line))
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(VERDICTS):
        terminalreporter.write_line(line)
