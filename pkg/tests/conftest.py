import pytest

_CRITERIA = []


@pytest.fixture
def report():
    """Record one acceptance line: report(number, ok, detail)."""
    def add(number, ok, detail):
        _CRITERIA.append((number, ok, detail))
        return ok
    return add


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, ok, detail in sorted(_CRITERIA, key=lambda c: c[0]):
        terminalreporter.write_line(f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
