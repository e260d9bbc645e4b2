import pytest

_ACCEPTANCE = []


@pytest.fixture
def report():
    """Record one acceptance line; returns the verdict so tests can assert on it."""
    def _report(name, ok, detail):
        ok = bool(ok)
        _ACCEPTANCE.append((name, ok, detail))
        print(f"ACCEPTANCE {'PASS' if ok else 'FAIL'} {name}: {detail}")
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
