import pytest

_VERDICTS: dict[int, list[tuple[str, bool, str]]] = {}


@pytest.fixture
def verdict():
    """Record one acceptance check: ``verdict(criterion, name, ok, detail)``."""
    def record(criterion: int, name: str, ok: bool, detail: str = "") -> bool:
        ok = bool(ok)
        _VERDICTS.setdefault(criterion, []).append((name, ok, detail))
        print(f"criterion {criterion} [{name}]: {'PASS' if ok else 'FAIL'} {detail}")
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(_VERDICTS):
        checks = _VERDICTS[criterion]
        ok = all(passed for _, passed, _ in checks)
        parts = "; ".join(f"{name} {'ok' if passed else 'FAILED'} {detail}".rstrip()
                          for name, passed, detail in checks)
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  ({parts})")
