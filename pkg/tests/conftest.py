import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "npns",
    max_examples=40,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "npns"))

_ACCEPTANCE = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion number and title")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call" and not (rep.when == "setup" and rep.failed):
        return
    n, title = marker.args
    detail = dict(item.user_properties).get("detail", "")
    if rep.failed and not detail:
        detail = str(rep.longrepr.reprcrash.message if hasattr(rep.longrepr, "reprcrash") else rep.longrepr)[:160]
    _ACCEPTANCE[n] = (title, rep.passed, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, ok, detail = _ACCEPTANCE[n]
        tr.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d}: {title}  ({detail})")


@pytest.fixture
def detail(request):
    """Attach a one-line measured summary to the acceptance line of this test."""

    def record(text):
        request.node.user_properties.append(("detail", text))
        print(f"criterion detail: {text}")

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
