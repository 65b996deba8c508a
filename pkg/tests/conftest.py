import pytest

_RESULTS: dict[int, tuple[bool, str]] = {}
_EXPECTED = range(1, 12)


class _Recorder:
    def __call__(self, number: int, passed: bool, detail: str) -> bool:
        _RESULTS[number] = (bool(passed), detail)
        return bool(passed)


@pytest.fixture(scope="session")
def criterion():
    """``criterion(n, passed, detail)`` records an acceptance outcome for the summary."""
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in _EXPECTED:
        if n in _RESULTS:
            ok, detail = _RESULTS[n]
            terminalreporter.write_line(f"CRITERION {n}: {'PASS' if ok else 'FAIL'} ({detail})")
        else:
            terminalreporter.write_line(f"CRITERION {n}: FAIL (not evaluated)")
