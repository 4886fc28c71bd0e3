_ACCEPTANCE_LINES: list[str] = []


def record_acceptance(line: str) -> None:
    """Keep a criterion's result line for the end-of-run summary."""
    _ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
