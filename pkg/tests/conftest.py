import pytest

_ACCEPTANCE_LINES = []


@pytest.fixture
def announce(capsys):
    """Print an acceptance verdict line past pytest's output capture."""

    def _announce(n, ok, detail):
        line = f"[ACCEPTANCE {n}] {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)

    return _announce


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
