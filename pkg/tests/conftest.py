import pytest

_LINES = pytest.StashKey()


@pytest.fixture
def record(request):
    """Append an acceptance verdict line; all lines are echoed in the terminal summary."""
    lines = request.config.stash.setdefault(_LINES, [])

    def add(number, title, passed, detail=""):
        status = "SKIP" if passed is None else ("PASS" if passed else "FAIL")
        lines.append(f"[{status}] criterion {number}: {title}" + (f" ({detail})" if detail else ""))

    return add


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
