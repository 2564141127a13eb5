import pytest

_CRITERIA: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion():
    """``criterion(num, name, ok, detail)`` records an acceptance result and asserts it."""

    def record(num: int, name: str, ok: bool, detail: str) -> None:
        prev = _CRITERIA.get(num)
        # a criterion split over several tests passes only if every part passes
        if prev is not None:
            ok, detail = prev[1] and ok, f"{prev[2]}; {detail}"
        _CRITERIA[num] = (name, bool(ok), detail)
        assert ok, f"criterion {num} ({name}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        name, ok, detail = _CRITERIA[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {num:2d} {name}: {detail}")
