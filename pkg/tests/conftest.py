import pytest

_CRITERIA: dict = {}


class _Recorder:
    def __call__(self, number: int, passed: bool, detail: str) -> bool:
        _CRITERIA.setdefault(number, []).append((bool(passed), detail))
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}"
        print(line)
        return bool(passed)


@pytest.fixture(scope="session")
def criterion():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        for passed, detail in _CRITERIA[number]:
            terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} criterion {number}: {detail}")
