import pytest

VERDICT_LINES: list[str] = []


@pytest.fixture
def verdict_log():
    def log(ok: bool, label: str, detail: str = "") -> None:
        line = f"{'PASS' if ok else 'FAIL'}  {label}" + (f": {detail}" if detail else "")
        if ok is None:
            line = f"INFO  {label}: {detail}"
        VERDICT_LINES.append(line)
        print(line, flush=True)

    return log


def pytest_terminal_summary(terminalreporter):
    if VERDICT_LINES:
        terminalreporter.section("acceptance criteria")
        for line in VERDICT_LINES:
            terminalreporter.write_line(line)
