import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        measured = "; ".join(str(v) for k, v in item.user_properties if k == "measured")
        _RESULTS[number] = (report.outcome, title, measured)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        outcome, title, measured = _RESULTS[number]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        line = f"criterion {number}: {verdict}  {title}"
        if measured:
            line += f"  [{measured}]"
        terminalreporter.write_line(line)
