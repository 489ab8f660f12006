import pytest

VERDICTS = {}


class Criterion:
    """Collects one PASS/FAIL/BLOCKED verdict per acceptance criterion."""

    def __init__(self, number, title):
        self.number, self.title = number, title

    def check(self, ok: bool, detail: str):
        VERDICTS[self.number] = (self.title, "PASS" if ok else "FAIL", detail)
        assert ok, detail

    def block(self, reason: str):
        VERDICTS[self.number] = (self.title, "BLOCKED", reason)
        pytest.skip(f"BLOCKED: {reason}")


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(VERDICTS):
        title, status, detail = VERDICTS[number]
        terminalreporter.write_line(f"criterion {number:>2} {status:<7} {title}: {detail}")
