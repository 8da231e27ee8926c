import pytest

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def record():
    """Store one PASS/FAIL line for an acceptance criterion."""

    def _record(number: int, title: str, ok: bool, detail: str) -> bool:
        ACCEPTANCE[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
        return ok

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
