import numpy as np
import pytest

from clustercoop.geometry import AgentMessage, OrientedBox, PointCluster, Pose


def make_cluster(rng, n_points=None, feature_dim=8, center=None, source=None, with_box=True,
                 spread=1.0):
    n = int(rng.integers(1, 40)) if n_points is None else n_points
    c = rng.uniform(-50, 50, 3) if center is None else np.asarray(center, float)
    pts = c + rng.normal(0, spread, (n, 3))
    box = None
    if with_box:
        box = OrientedBox(c + rng.normal(0, 0.1, 3), tuple(rng.uniform(1, 5, 3)),
                          float(rng.uniform(-np.pi, np.pi)), float(rng.uniform(0, 1)))
    return PointCluster(points=pts, center=c, feature=rng.normal(size=feature_dim),
                        proposal=box, semantic_scores=rng.uniform(0, 1, n), source=source)


def make_message(rng, n_clusters=None, feature_dim=8, agent_id=1, timestamp=0.0):
    k = int(rng.integers(0, 6)) if n_clusters is None else n_clusters
    pose = Pose(*rng.uniform(-100, 100, 3), float(rng.uniform(-np.pi, np.pi)))
    clusters = tuple(make_cluster(rng, feature_dim=feature_dim, source=agent_id,
                                  with_box=bool(rng.integers(0, 2))) for _ in range(k))
    return AgentMessage(clusters, pose, agent_id, timestamp)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list = []


@pytest.fixture
def accept():
    """Record one acceptance line, then assert it."""

    def report(number, name, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {name}" + (
            f" ({detail})" if detail else "")
        _ACCEPTANCE.append((number, line))
        print(line)
        assert ok, line

    return report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
