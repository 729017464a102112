import pytest

# criterion id -> list of (passed, detail), filled by the acceptance tests
ACCEPTANCE: dict[str, list[tuple[bool, str]]] = {}


@pytest.fixture
def criterion():
    def record(name: str, passed: bool, detail: str) -> bool:
        ACCEPTANCE.setdefault(name, []).append((bool(passed), detail))
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda k: int(k[2:])):
        parts = ACCEPTANCE[name]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"{name} {status}: " + "; ".join(d for _, d in parts))
