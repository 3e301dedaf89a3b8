"""Collects one pass/fail line per acceptance criterion for the terminal summary."""

import pytest

_RESULTS: dict[int, dict[str, tuple[bool, str]]] = {}


@pytest.fixture
def report():
    def record(number: int, passed: bool, detail: str, key: str = "") -> bool:
        cases = _RESULTS.setdefault(number, {})
        # a later pass under the same key never hides an earlier failure
        if key not in cases or cases[key][0]:
            cases[key] = (bool(passed), detail)
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        cases = _RESULTS[number].values()
        status = "PASS" if all(ok for ok, _ in cases) else "FAIL"
        detail = "; ".join(d for _, d in cases)
        terminalreporter.write_line(f"criterion {number}: {status} {detail}")
