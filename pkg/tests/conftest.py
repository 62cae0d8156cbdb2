import pytest

# (number, title, passed, measured) rows collected by the acceptance suite
ACCEPTANCE_ROWS: list[tuple[int, str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record and assert one numbered acceptance criterion.

    ``criterion(n, title, passed, measured)`` prints a PASS/FAIL line right away
    and keeps it for the end-of-run summary, then fails the test if needed.
    """

    def record(number: int, title: str, passed: bool, measured: str) -> None:
        passed = bool(passed)
        ACCEPTANCE_ROWS.append((number, title, passed, measured))
        print(f"\ncriterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} -- {measured}")
        assert passed, f"criterion {number} ({title}) not met: {measured}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_ROWS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, measured in sorted(ACCEPTANCE_ROWS):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {title} -- {measured}")
