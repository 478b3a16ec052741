import pytest

_LINES: list[str] = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the lines are repeated in the terminal summary."""

    def record(number: int, title: str, ok: bool, elapsed: float, limit: float, detail: str) -> bool:
        passed = bool(ok) and elapsed < limit
        line = (f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} | {detail} | "
                f"runtime {elapsed:.2f}s (limit {limit:g}s)")
        print(line)
        _LINES.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES):
            terminalreporter.write_line(line)
