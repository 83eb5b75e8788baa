import pytest

# criterion number -> [title, passed, measured values]
RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    n, title = mark.args
    entry = RESULTS.setdefault(n, [title, True, []])
    entry[1] = entry[1] and rep.passed
    entry[2] += [v for k, v in item.user_properties if k == "measured" and v not in entry[2]]


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(RESULTS):
        title, ok, notes = RESULTS[n]
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {title}"
        if notes:
            line += "  [" + "; ".join(notes) + "]"
        terminalreporter.write_line(line)
