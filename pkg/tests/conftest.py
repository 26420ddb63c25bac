"""Shared pytest plumbing: collects acceptance verdict lines so they are
printed once, uncaptured, at the end of the terminal session."""

_verdicts: list[str] = []


def register_verdict(line: str) -> None:
    _verdicts.append(line)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if _verdicts:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in _verdicts:
            terminalreporter.write_line(line)
