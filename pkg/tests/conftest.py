"""Collects acceptance-criterion outcomes and prints one line per criterion."""

import pytest

_results = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    number, title = marker.args
    entry = _results.setdefault(number, {"title": title, "failed": False, "passed": 0, "skipped": 0, "notes": []})
    if report.failed:
        entry["failed"] = True
    elif report.when == "call":
        entry["skipped" if report.skipped else "passed"] += 1
    if report.when == "call":
        entry["notes"].extend(f"{k}={v}" for k, v in item.user_properties)


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_results):
        entry = _results[number]
        status = "FAIL" if entry["failed"] else "PASS" if entry["passed"] else "SKIP"
        line = f"criterion {number}: {status}  {entry['title']}"
        if entry["notes"]:
            line += "  [" + ", ".join(entry["notes"]) + "]"
        terminalreporter.write_line(line)
