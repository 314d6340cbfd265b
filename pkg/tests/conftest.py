import pytest

_RESULTS = []


@pytest.fixture
def report():
    """Record an acceptance outcome, print it, then assert it."""

    def _report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} ({detail})"
        _RESULTS.append((number, line))
        print(line)
        assert ok, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_RESULTS, key=lambda r: str(r[0])):
        terminalreporter.write_line(line)
