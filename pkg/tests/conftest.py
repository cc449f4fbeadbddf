import pytest

_ACCEPTANCE = {}


class _Recorder:
    def __call__(self, criterion, ok, detail):
        _ACCEPTANCE[criterion] = ("PASS" if ok else "FAIL", detail)
        return ok

    def log(self, criterion, detail):
        _ACCEPTANCE[criterion] = ("LOGGED", detail)


@pytest.fixture(scope="session")
def acceptance():
    return _Recorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {status} - {detail}")
