import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from rts_uncertainty.geometry import RigidTransform, so3_exp

settings.register_profile(
    "default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

_criteria = {}


def pytest_runtest_logreport(report):
    marker = getattr(report, "criterion", None)
    if marker is None:
        return
    failed = report.failed
    if report.when == "call" or failed:
        previous = _criteria.get(marker, "PASS")
        _criteria[marker] = "FAIL" if failed or previous == "FAIL" else "PASS"


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for (number, title), status in sorted(_criteria.items()):
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}")


def random_transform(rng, max_angle=np.pi / 2, max_offset=10.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    angle = rng.uniform(0.0, max_angle)
    return RigidTransform(so3_exp(angle * axis), rng.uniform(-max_offset, max_offset, size=3))


def equilateral(side):
    """Equilateral triangle in the xy plane, centroid at the origin."""
    a = 2 * np.pi * np.arange(3) / 3
    r = side / np.sqrt(3.0)
    return np.stack([r * np.cos(a), r * np.sin(a), np.zeros(3)], axis=1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
