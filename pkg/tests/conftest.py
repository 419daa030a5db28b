import numpy as np
import pytest

from treekit.cloud import LabeledPointCloud

_criteria = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    number = getattr(report, "criterion", None)
    if number is None:
        return
    entry = _criteria.setdefault(number, {"title": report.criterion_title, "passed": 0, "failed": 0})
    entry["passed" if report.outcome == "passed" else "failed"] += 1


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is not None:
        report.criterion = marker.args[0]
        report.criterion_title = marker.args[1]


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        entry = _criteria[number]
        status = "PASS" if entry["failed"] == 0 else "FAIL"
        terminalreporter.write_line(
            f"[{status}] criterion {number}: {entry['title']} ({entry['passed']} passed, {entry['failed']} failed)"
        )


def make_cloud(xyz, semantic=None, instance=None):
    xyz = np.asarray(xyz, dtype=float).reshape(-1, 3)
    n = len(xyz)
    instance = np.zeros(n, dtype=int) if instance is None else np.asarray(instance)
    semantic = (instance > 0).astype(int) if semantic is None else np.asarray(semantic)
    return LabeledPointCloud(xyz, semantic, instance)


@pytest.fixture
def square_cloud():
    """Corners of a 10 m x 10 m square plus 996 interior points (hull area 100, density 10)."""
    rng = np.random.default_rng(7)
    corners = [[0, 0, 0], [10, 0, 0], [10, 10, 0], [0, 10, 0]]
    interior = np.column_stack([rng.uniform(0.5, 9.5, size=(996, 2)), rng.uniform(0, 20, size=996)])
    xyz = np.vstack([corners, interior])
    instance = np.concatenate([[0, 0, 0, 0], rng.integers(0, 6, size=996)])
    return make_cloud(xyz, instance=instance)
