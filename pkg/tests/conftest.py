import pytest


def pytest_terminal_summary(terminalreporter):
    """One line per acceptance criterion, after the run."""
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if "test_acceptance.py" not in rep.nodeid or rep.when != "call":
                continue
            props = dict(rep.user_properties)
            if "criterion" not in props:
                continue
            status = "PASS" if rep.passed else "FAIL"
            lines.append((props["criterion"], f"criterion {props['criterion']:>2}: {status}  {props.get('detail', '')}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)


@pytest.fixture
def criterion(record_property):
    """Record the criterion number and a detail line for the summary."""

    def record(number: int, detail: str):
        record_property("criterion", number)
        record_property("detail", detail)
        print(f"criterion {number}: {detail}")

    return record
