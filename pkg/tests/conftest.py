"""Collects acceptance outcomes and prints one verdict line per criterion."""

import pytest

_VERDICTS: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def measured(request):
    """Attach a measurement string to the current criterion's verdict line."""
    notes = []
    request.node.user_properties.append(("measured", notes))
    return notes.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when not in ("setup", "call"):
        return
    if report.when == "setup" and report.passed:
        return
    number, title = mark.args
    notes = next((v for k, v in item.user_properties if k == "measured"), [])
    entry = _VERDICTS.setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] = entry["ok"] and report.passed
    entry["notes"].extend(notes)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for number in sorted(_VERDICTS):
        v = _VERDICTS[number]
        line = f"criterion {number:>2}: {'PASS' if v['ok'] else 'FAIL'}  {v['title']}"
        if v["notes"]:
            line += "  [" + "; ".join(v["notes"]) + "]"
        tr.write_line(line)
