import pytest

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


@pytest.fixture
def acceptance_report():
    def report(number, name, ok, detail, status=None):
        status = status or ("PASS" if ok else "FAIL")
        ACCEPTANCE_LINES[number] = f"criterion {number:2d} [{status}] {name}: {detail}"
        print(ACCEPTANCE_LINES[number])
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[number])
