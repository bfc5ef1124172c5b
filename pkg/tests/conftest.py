import pytest

ACCEPTANCE_LINES = []


@pytest.fixture
def record():
    """Log one pass/fail line for an acceptance criterion."""

    def _record(label, ok, detail):
        status = "PASS" if ok is True else ("SKIP" if ok is None else "FAIL")
        line = f"criterion {label}: {status} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
