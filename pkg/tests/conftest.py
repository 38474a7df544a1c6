import pytest

# (criterion number, title, passed, detail) tuples filled by test_acceptance.py
ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance verdict and print it as a PASS/FAIL line."""

    def record(number, title, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} [{number}] {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(ACCEPTANCE_LINES, key=lambda item: str(item[0])):
        terminalreporter.write_line(line)
