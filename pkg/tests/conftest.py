import pytest

from helpers import fixture_scenario


@pytest.fixture(scope="session")
def ring_scn():
    return fixture_scenario()


@pytest.fixture(scope="session")
def ring_net(ring_scn):
    from gasnetopt.scenario import scenario_network
    return scenario_network(ring_scn)


_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    key = mark.args[0]
    if rep.when == "call" or (rep.when == "setup" and rep.failed):
        _ACCEPTANCE[key] = (mark.args[1], "PASS" if rep.passed else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_ACCEPTANCE, key=lambda k: int(k[2:])):
        title, verdict = _ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {title}: {verdict}")


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(key, title): acceptance criterion")
