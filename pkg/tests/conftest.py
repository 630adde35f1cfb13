import pytest

_LINES = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records a pass/fail line and returns ``ok``."""
    lines = request.config.stash.setdefault(_LINES, [])

    def report(k, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {k}: {detail}"
        lines.append((k, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_LINES, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda t: t[0]):
        terminalreporter.write_line(line)
