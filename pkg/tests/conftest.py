import pytest

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion_log():
    def record(line: str) -> None:
        ACCEPTANCE_LINES.append(line)
        print(line)
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
