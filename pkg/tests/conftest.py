import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from elastictree import build_tree

settings.register_profile(
    "default", deadline=None, max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture])
settings.load_profile("default")


def line(a, b, n=20):
    t = np.linspace(0.0, 1.0, n)[:, None]
    return np.asarray(a, float) + t * (np.asarray(b, float) - np.asarray(a, float))


def y_records():
    return [
        {"id": "trunk", "parent": None, "attach_s": None, "points": line([0, 0, 0], [0, 0, 2])},
        {"id": "left", "parent": "trunk", "attach_s": 0.8,
         "points": line([0, 0, 1.6], [-0.7, 0.1, 2.3])},
        {"id": "right", "parent": "trunk", "attach_s": 0.5,
         "points": line([0, 0, 1.0], [0.8, 0.0, 1.5])},
    ]


@pytest.fixture
def y_tree():
    return build_tree(y_records(), name="Y", units="mm")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance summary

_criteria = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    number, title = marker.args
    failed = report.failed or (report.when == "setup" and report.skipped)
    if report.when == "call" or failed:
        _criteria[number] = (title, "FAIL" if failed else "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, status = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {title}")
