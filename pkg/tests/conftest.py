"""Collects the acceptance outcome of every ``@pytest.mark.criterion`` test
and prints one line per criterion at the end of the session."""

import pytest

_outcomes: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    report = (yield).get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    number, title = mark.args
    entry = _outcomes.setdefault(number, [title, True, []])
    if report.failed:
        entry[1] = False
        entry[2].append(item.name)
    elif report.skipped and report.when == "call":
        entry[1] = False
        entry[2].append(f"{item.name} (skipped)")
    if report.when == "call":
        for key, value in item.user_properties:
            if key == "measured":
                entry.append(value)


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_outcomes):
        title, ok, failed, *measured = _outcomes[number]
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {title}"
        if measured:
            line += f"  [{'; '.join(measured)}]"
        if failed:
            line += f"  failing: {', '.join(failed)}"
        terminalreporter.write_line(line)
