import pytest


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for the end-of-run acceptance summary."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", [])

    def record(number: int, title: str, passed: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        lines.append((number, line))
        print(line)
        if not passed:
            pytest.fail(line, pytrace=False)

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", None)
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines):
        terminalreporter.write_line(line)
