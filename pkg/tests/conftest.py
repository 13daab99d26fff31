import pytest

_lines = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one acceptance verdict and fail the test if it did not pass."""
    store = request.config.stash.setdefault(_lines, [])

    def check(number: int, name: str, passed: bool, detail: str = ""):
        line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {name}: {detail}"
        store.append(line)
        print(line)
        assert passed, line

    return check


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_lines, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
