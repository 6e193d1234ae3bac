import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from pmsm_injection.magnetics import PRESETS

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("thorough", max_examples=500, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture(params=sorted(PRESETS))
def motor(request):
    return PRESETS[request.param]


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.stash[_CRITERIA] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    entry = item.config.stash[_CRITERIA].setdefault(number, {"title": title, "ok": True, "notes": []})
    entry["ok"] &= rep.passed
    entry["notes"].extend(str(v) for k, v in item.user_properties if k == "measured")


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_CRITERIA]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        r = results[number]
        status = "PASS" if r["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {r['title']}")
        for note in r["notes"]:
            terminalreporter.write_line(f"    {note}")
