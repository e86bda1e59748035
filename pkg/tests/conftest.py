import pytest

# criterion number -> (title, "PASS" | "FAIL")
_results: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    ok = _results.get(n, (title, "PASS"))[1] == "PASS" and not report.failed
    if report.when == "call" or report.failed:
        _results[n] = (title, "PASS" if ok else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_results):
        title, status = _results[n]
        terminalreporter.write_line(f"criterion {n}: {status}  {title}")
