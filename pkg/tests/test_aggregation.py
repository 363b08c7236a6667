import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clustercoop.aggregation import (
    AggregationParams, aggregate, match_clusters, match_components, merge_tuple, refit_box,
)
from clustercoop.geometry import AgentMessage, OrientedBox, PointCluster, Pose
from clustercoop.spatial import OpCounter

from conftest import make_cluster
from test_spatial import brute_components


def pc(center, source=None, n=3, conf=0.5, feature=(0.0,)):
    center = np.asarray(center, float)
    return PointCluster(points=np.tile(center, (n, 1)), center=center, feature=np.array(feature),
                        proposal=OrientedBox(center, (1.5, 1.8, 4.0), 0.0, conf), source=source)


def brute_match(items, eps):
    centers = [c.center for _, c in items]
    pairs = [(i, j) for i, j in itertools.combinations(range(len(items)), 2)
             if items[i][0] != items[j][0] and np.linalg.norm(centers[i] - centers[j]) < eps]
    comps, demoted = [], []
    for comp in brute_components(len(items), pairs):
        if len(comp) == 1:
            comps.append(comp)
            continue
        mid = np.mean([centers[i] for i in comp], axis=0)
        keep = {}
        for i in comp:
            d = np.sum((centers[i] - mid) ** 2)
            a = items[i][0]
            if a not in keep or d < keep[a][0]:
                keep[a] = (d, i)
        kept = sorted(i for _, i in keep.values())
        comps.append(kept)
        demoted += [i for i in comp if i not in kept]
    return sorted(comps), sorted(demoted)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 200), st.integers(1, 4), st.floats(0.2, 2.0), st.integers(0, 10**6))
def test_matching_equals_brute_force(n, n_agents, eps, seed):
    rng = np.random.default_rng(seed)
    # objects with jittered per-agent observations so matches actually happen
    objects = rng.uniform(-20, 20, (max(1, n // 2), 3))
    items = []
    for _ in range(n):
        o = objects[rng.integers(len(objects))]
        items.append((int(rng.integers(n_agents)),
                      PointCluster(points=[o], center=o + rng.normal(0, 0.3, 3))))
    comps, demoted = match_components(items, eps)
    assert (sorted(comps), sorted(demoted)) == brute_match(items, eps)


def test_threshold_examples():
    r = match_clusters([pc([0, 0, 0])], {1: [pc([0.5, 0, 0])]}, 0.6)
    assert len(r.shared) == 1 and not r.unique
    r = match_clusters([pc([0, 0, 0])], {1: [pc([0.7, 0, 0])]}, 0.6)
    assert not r.shared and len(r.unique) == 2


def test_three_agents_form_one_tuple():
    tri = [[0, 0, 0], [0.4, 0, 0], [0.2, 0.3464, 0]]
    r = match_clusters([pc(tri[0])], {1: [pc(tri[1])], 2: [pc(tri[2])]}, 0.6)
    assert len(r.shared) == 1 and len(r.shared[0]) == 3
    assert sorted(c.source for c in r.shared[0]) == [0, 1, 2]


def test_same_agent_duplicates_demoted():
    r = match_clusters([pc([0, 0, 0]), pc([0.3, 0, 0])], {1: [pc([0.1, 0, 0])]}, 0.6)
    assert len(r.shared) == 1 and len(r.unique) == 1
    assert all(len({c.source for c in t}) == len(t) for t in r.shared)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_partition_invariant(seed):
    rng = np.random.default_rng(seed)
    ego = [make_cluster(rng, center=rng.uniform(-5, 5, 3)) for _ in range(rng.integers(0, 8))]
    rec = {a: [make_cluster(rng, center=rng.uniform(-5, 5, 3)) for _ in range(rng.integers(0, 8))]
           for a in (1, 2)}
    r = match_clusters(ego, rec, 1.0)
    total = len(ego) + sum(len(v) for v in rec.values())
    assert len(r.unique) + sum(len(t) for t in r.shared) == total


def test_merge_examples():
    a = pc([0, 0, 0], 0, conf=0.6, feature=(2.0, 4.0))
    b = pc([1, 0, 0], 1, conf=0.9, feature=(4.0, 8.0))
    m = merge_tuple((a, b))
    assert np.array_equal(m.center, [0.5, 0, 0])
    assert np.array_equal(m.feature, [3.0, 6.0])
    assert m.proposal is b.proposal
    assert m.n_points == 6


def test_merge_tie_goes_to_lowest_agent():
    a = pc([0, 0, 0], 2, conf=0.7)
    b = pc([0.2, 0, 0], 1, conf=0.7)
    c = pc([0.1, 0, 0], 5, conf=0.7)
    for perm in itertools.permutations((a, b, c)):
        assert merge_tuple(perm).proposal is b.proposal


def test_merge_requires_two():
    with pytest.raises(ValueError):
        merge_tuple((pc([0, 0, 0]),))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_merge_order_invariant(seed):
    rng = np.random.default_rng(seed)
    k = int(rng.integers(2, 5))
    members = [make_cluster(rng, source=i, with_box=True) for i in range(k)]
    ref = merge_tuple(members)
    perm = [members[i] for i in rng.permutation(k)]
    got = merge_tuple(perm)
    assert np.allclose(got.center, ref.center, atol=1e-12)
    assert np.allclose(got.feature, ref.feature, atol=1e-12)
    assert got.proposal is ref.proposal
    assert sorted(map(tuple, got.points.tolist())) == sorted(map(tuple, ref.points.tolist()))


def test_refit_keeps_box_when_points_inside(rng):
    box = OrientedBox([0, 0, 0], (2, 2, 4), 0.3)
    pts = rng.uniform(-0.9, 0.9, (30, 3))
    assert box.contains(pts).all()
    c = PointCluster(points=pts, center=[0, 0, 0], proposal=box)
    assert refit_box(c) is box


def test_refit_grows_to_union_extent():
    # a 4 m long object seen front and back by two agents, under a 2.5 m proposal
    front = np.column_stack([np.linspace(0.2, 2.0, 10), np.zeros(10), np.zeros(10)])
    back = front * [-1, 1, 1]
    box = OrientedBox([0, 0, 0], (1.5, 1.8, 2.5), 0.0, 0.9)
    a = PointCluster(points=front, center=[0.1, 0, 0], proposal=box, source=0)
    b = PointCluster(points=back, center=[-0.1, 0, 0], proposal=box.with_confidence(0.5), source=1)
    merged = merge_tuple((a, b))
    new = refit_box(merged)
    span = merged.points[:, 0].max() - merged.points[:, 0].min()
    assert new.l >= span and new.l > 2.5
    assert new.w == box.w and new.h == box.h
    assert new.contains(merged.points, margin=1e-9).all()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_refit_never_shrinks_and_covers_grown_axes(seed):
    rng = np.random.default_rng(seed)
    box = OrientedBox(rng.normal(size=3), tuple(rng.uniform(0.5, 3, 3)), rng.uniform(-3, 3))
    pts = box.center + rng.normal(0, 2, (20, 3))
    new = refit_box(PointCluster(points=pts, center=box.center, proposal=box))
    assert new.h >= box.h and new.w >= box.w and new.l >= box.l
    assert new.yaw == box.yaw and new.confidence == box.confidence


def test_aggregate_examples():
    rng = np.random.default_rng(0)
    ego = AgentMessage(tuple(pc(rng.uniform(-30, 30, 3), 0) for _ in range(4)), Pose(), 0)
    assert [c.center.tolist() for c in aggregate(ego, [])] == [c.center.tolist()
                                                              for c in ego.clusters]
    far = AgentMessage(tuple(pc([200 + 10 * i, 0, 0]) for i in range(3)), Pose(), 1)
    out = aggregate(ego, [far])
    assert len(out) == 7


def test_aggregate_shared_objects_in_other_frame():
    objects = np.array([[10, 0, 0], [20, 5, 0], [-8, 12, 0], [3, -15, 0], [30, 30, 0]], float)
    other_pose = Pose(40, -10, 0, 2.0)
    inv = other_pose.inverse()
    ego = AgentMessage(tuple(pc(o, conf=0.6) for o in objects), Pose(), 0)
    other = AgentMessage(tuple(pc(inv.apply(o), conf=0.8) for o in objects), other_pose, 1)
    counter = OpCounter()
    out = aggregate(ego, [other], AggregationParams(0.6), counter)
    assert len(out) == 5
    assert all(c.n_points == 6 for c in out)
    assert all(c.source == 0 for c in out)
    assert counter["merge"] == 10 and counter["transform"] == 5


def test_params_validation():
    with pytest.raises(ValueError):
        AggregationParams(0.0)
