import pytest

_RESULTS: dict = {}


class AcceptanceLog:
    def record(self, number: int, title: str, passed: bool, detail: str = "") -> bool:
        prev = _RESULTS.get(number)
        if prev is not None:  # a criterion checked by several tests passes only if all parts do
            passed = passed and prev[1]
            detail = f"{prev[2]}; {detail}" if detail else prev[2]
        _RESULTS[number] = (title, passed, detail)
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceLog()


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        title, passed, detail = _RESULTS[number]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"AC{number:<2d} {status}  {title}: {detail}")
