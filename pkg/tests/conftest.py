"""Acceptance verdicts: every test marked ``criterion(n)`` contributes one PASS/FAIL line."""

import pytest

_verdicts: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n = marker.args[0]
    detail = dict(item.user_properties).get("measured", "")
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        verdict = "PASS" if rep.passed else "FAIL"
        if rep.failed and not detail:
            detail = str(rep.longrepr).strip().splitlines()[-1][:160]
        _verdicts[n] = (verdict, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_verdicts):
        verdict, detail = _verdicts[n]
        terminalreporter.write_line(f"{verdict} criterion {n:>2}: {detail}")
