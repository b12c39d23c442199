import pytest

ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance criterion verdict: ``criterion(number, passed, detail)``."""

    def record(number: int, passed: bool, detail: str):
        ACCEPTANCE[number] = (bool(passed), detail)
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in range(1, 12):
        if number in ACCEPTANCE:
            passed, detail = ACCEPTANCE[number]
            terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {number:2d}: NOT RUN")
