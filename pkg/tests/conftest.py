import pytest

# (number, passed, detail) appended by the acceptance suite
CRITERIA: list[tuple[int, bool, str]] = []


@pytest.fixture
def criterion():
    def record(number: int, passed: bool, detail: str) -> None:
        CRITERIA.append((number, bool(passed), detail))
        print(f"criterion {number}: {'PASS' if passed else 'FAIL'} ({detail})")
    return record


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, passed, detail in sorted(CRITERIA):
        terminalreporter.write_line(
            f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}")
