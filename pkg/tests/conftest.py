import pytest

_VERDICTS = {}


@pytest.fixture
def verdict():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""
    def record(number, title, ok, detail=""):
        _VERDICTS[number] = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}" + \
            (f" ({detail})" if detail else "")
        print(_VERDICTS[number])
        assert ok, _VERDICTS[number]
    return record


def pytest_terminal_summary(terminalreporter):
    if _VERDICTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_VERDICTS):
            terminalreporter.write_line(_VERDICTS[number])
