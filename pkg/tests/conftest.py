import pytest

# criterion number -> "PASS/FAIL criterion n: detail"; printed once at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}
SUPPLEMENTARY_LINES: list[str] = []


@pytest.fixture
def acceptance_report():
    def report(n: int, passed: bool, detail: str) -> bool:
        line = f"{'PASS' if passed else 'FAIL'} criterion {n}: {detail}"
        ACCEPTANCE_LINES[n] = line
        print(line)
        return passed

    return report


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
    for line in SUPPLEMENTARY_LINES:
        terminalreporter.write_line(line)
