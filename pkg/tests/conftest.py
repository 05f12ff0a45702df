import pytest

_ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def acceptance():
    """record(n, ok, detail) stores and prints the verdict line of criterion n."""

    def record(n, ok, detail):
        line = f"[acceptance {n:2d}] {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE[n] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        terminalreporter.write_line(_ACCEPTANCE[n])
