"""Prints one verdict line per acceptance criterion at the end of the run."""

import pytest

_verdicts = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or rep.when != "call" and not rep.failed:
        return
    number, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.when == "call" or number not in _verdicts:
        _verdicts[number] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_verdicts):
        title, ok, detail = _verdicts[number]
        line = f"{'PASS' if ok else 'FAIL'}  {number:>2}. {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
