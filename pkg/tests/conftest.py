import pytest


@pytest.fixture
def acceptance(request):
    """Record one summary line per acceptance criterion."""
    log = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(n, passed, detail):
        log[n] = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(log[n])

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    log = config.__dict__.get("_acceptance_lines")
    if log:
        terminalreporter.section("acceptance criteria")
        for n in sorted(log):
            terminalreporter.write_line(log[n])
