import pytest

_results = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion checked by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        detail = dict(item.user_properties).get("detail", "")
        ok = report.outcome == "passed"
        seconds = report.duration
        previous = _results.get(number)
        if previous is not None:
            ok = ok and previous[1]
            detail = "; ".join(d for d in (previous[2], detail) if d)
            seconds += previous[3]
        _results[number] = (title, ok, detail, seconds)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        title, ok, detail, seconds = _results[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title} ({seconds:.1f} s)"
        if detail:
            line += f"  {detail}"
        terminalreporter.write_line(line)
