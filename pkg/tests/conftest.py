import pytest

# one line per acceptance criterion, printed at the end of the run
VERDICTS: list[str] = []


@pytest.fixture
def verdict():
    def record(name: str, passed: bool, detail: str) -> bool:
        line = f"{name}: {'PASS' if passed else 'FAIL'}  {detail}"
        VERDICTS.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
