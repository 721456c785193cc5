import pytest


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, name, passed, detail)``."""
    def record(number, name, passed, detail=""):
        line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {name}" + (f" ({detail})" if detail else "")
        request.config.acceptance_lines.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
