import pytest

# criterion id -> one-line verdict, filled by tests/test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: int(k[1:])):
        terminalreporter.write_line(ACCEPTANCE[key])


@pytest.fixture
def verdict(capsys):
    """verdict(cid, title, ok, detail): print and record one pass/fail line, then assert."""

    def emit(cid: str, title: str, ok: bool, detail: str):
        line = f"[{'PASS' if ok else 'FAIL'}] {cid:<4} {title}: {detail}"
        ACCEPTANCE[cid] = line
        with capsys.disabled():
            print("\n" + line, flush=True)
        assert ok, line

    return emit
