import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile(
    "default",
    max_examples=60,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

GOLDEN = os.path.join(os.path.dirname(__file__), "golden")


def small_doc(**over) -> dict:
    """A cheap fault-free scenario document; keyword args override top-level fields."""
    doc = {
        "schema_version": 1,
        "node_count": 10,
        "super_peer_count": 4,
        "seed": 1,
        "duration_ms": 3_600_000,
        "signature_scheme": "fast",
        "overlay": {"max_connection_fraction": 1.0},
        "workload": {"tx_per_node_per_hour": 12},
    }
    doc.update(over)
    return doc


@pytest.fixture
def fast_keys():
    from coopstake.crypto import KeyDirectory, keygen

    directory = KeyDirectory("fast")
    keys = [keygen(bytes([i]) * 32, "fast") for i in range(1, 9)]
    for k in keys:
        directory.register(k)
    return keys, directory


# -- acceptance summary --------------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): an acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    num, title = mark.args
    detail = dict(item.user_properties).get("detail", "")
    prev = _CRITERIA.get(num, (title, True, []))
    _CRITERIA[num] = (title, prev[1] and rep.passed, prev[2] + ([detail] if detail else []))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(_CRITERIA):
        title, ok, details = _CRITERIA[num]
        line = f"criterion {num:>2} {'PASS' if ok else 'FAIL'}  {title}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
