"""Collects acceptance-criterion outcomes and prints one line per criterion."""
import pytest

_RESULTS = {}  # criterion number -> {"title": str, "outcomes": [(test id, outcome, detail)]}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if report.when == "call" or (report.when == "setup" and not report.passed):
        number, title = mark.args
        entry = _RESULTS.setdefault(number, {"title": title, "outcomes": []})
        detail = ""
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        elif report.failed:
            detail = report.longreprtext.strip().splitlines()[-1][:160] if report.longreprtext else ""
        entry["outcomes"].append((item.name, report.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        states = [o for _, o, _ in entry["outcomes"]]
        if "failed" in states:
            verdict = "FAIL"
        elif "skipped" in states:
            verdict = "UNVERIFIED"
        else:
            verdict = "PASS"
        notes = "; ".join(d for _, o, d in entry["outcomes"] if d)
        line = f"criterion {number}: {verdict:<10} {entry['title']}"
        terminalreporter.write_line(line + (f"  [{notes}]" if notes else ""))
