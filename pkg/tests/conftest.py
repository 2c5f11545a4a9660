import pytest

ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture
def record():
    """record(number, title, ok, detail) stores a summary line, then asserts ok."""

    def _record(number, title, ok, detail):
        ACCEPTANCE_LINES.append((number, f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2} {title}: {detail}"))
        assert ok, f"criterion {number} ({title}): {detail}"

    return _record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda x: x[0]):
        terminalreporter.write_line(line)
