import pytest

# criterion number -> (passed, detail), filled by tests/test_acceptance.py
ACCEPTANCE = {}


@pytest.fixture
def record():
    """Store one acceptance verdict; the terminal summary prints them in order."""
    def fn(number, ok, detail):
        ACCEPTANCE[number] = (bool(ok), detail)
        return ok
    return fn


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
