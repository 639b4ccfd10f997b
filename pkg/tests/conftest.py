import pytest

_LINES: list[str] = []


@pytest.fixture
def report_criterion():
    """Records one "CRITERION n: PASS/FAIL ..." line; all lines are repeated in the terminal summary."""

    def report(number: int, passed: bool, detail: str) -> bool:
        line = f"CRITERION {number}: {'PASS' if passed else 'FAIL'} {detail}"
        print(line)
        _LINES.append(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if _LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
