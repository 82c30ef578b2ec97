import pytest

from plugsense.netmodel import LineParams, build_ieee37, make_grid


@pytest.fixture(scope="session")
def ieee37():
    return build_ieee37()


@pytest.fixture(scope="session")
def two_bus():
    # one 1 km purely resistive line of 0.1 ohm
    return make_grid("s", [("s", "n", 1000.0)], LineParams(0.1, 0.0), 230.0)


_acceptance: dict[str, tuple[str, bool]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.failed):
        return
    marker = report.keywords.get("acceptance")
    if not marker:
        return
    number = dict(report.user_properties).get("criterion")
    title = dict(report.user_properties).get("title", report.nodeid)
    if number is not None:
        prev = _acceptance.get(number, (title, True))[1]
        _acceptance[number] = (title, prev and report.passed)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_acceptance):
        title, ok = _acceptance[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
