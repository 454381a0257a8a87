import pytest

VERDICTS: dict[int, str] = {}


@pytest.fixture
def verdict():
    """Record ``(criterion, ok, detail)``; lines are echoed in the terminal summary."""

    def record(n: int, ok: bool, detail: str) -> bool:
        line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
        VERDICTS[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for n in sorted(VERDICTS):
            terminalreporter.write_line(VERDICTS[n])
