import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clustercoop.geometry import AgentMessage, OrientedBox, PointCluster, Pose
from clustercoop.packing import (
    PackingParams, ProposalNoise, comm_report, comm_volume, generate_proposals,
    kde_density_scores, override_points, pack_message, packed_comm, sample_count, sd_fps,
)
from clustercoop.scene import LabeledPointCloud

ZERO = ProposalNoise(0.0, 0.0, 0.0)


def vanilla_fps(points, n_sample):
    """Textbook farthest point sampling seeded at index 0."""
    n = len(points)
    chosen = [0]
    best = [math.dist(points[0], points[i]) for i in range(n)]
    while len(chosen) < n_sample:
        far, far_d = None, -1.0
        for i in range(n):
            if i in chosen:
                continue
            if best[i] > far_d:
                far, far_d = i, best[i]
        chosen.append(far)
        for i in range(n):
            best[i] = min(best[i], math.dist(points[far], points[i]))
    return chosen


def cloud(points, scores):
    n = len(points)
    return LabeledPointCloud(np.asarray(points, float), np.ones(n, bool), np.zeros(n, np.int64),
                             np.asarray(scores, float), np.asarray(points, float))


# --- comm ------------------------------------------------------------------

def test_comm_formula_examples():
    assert comm_report(128).comm_log2 == 8.0
    assert comm_report(32768).comm_log2 == 16.0
    c1 = PointCluster(points=np.zeros((10, 3)), center=[0, 0, 0], feature=np.zeros(16))
    c2 = PointCluster(points=np.zeros((6, 3)), center=[0, 0, 0], feature=np.zeros(16))
    msg = AgentMessage((c1, c2), Pose(), 1)
    rep = comm_volume(msg, include_scores=True)
    assert rep.n_values == (30 + 3 + 16 + 8 + 10) + (18 + 3 + 16 + 8 + 6) == 118
    assert rep.comm_log2 == math.log2(236)
    assert comm_volume(msg).n_values == 118 - 16


@given(st.integers(1, 10**7), st.integers(1, 10**7))
def test_comm_monotone(a, b):
    if a < b:
        assert comm_report(a).comm_log2 < comm_report(b).comm_log2


# --- sample counts and packing ---------------------------------------------

def test_sample_count_floor_and_min_one():
    assert sample_count(64, 0.25) == 16
    assert sample_count(64, 1 / 8) == 8
    assert sample_count(8, 1 / 8) == 1
    assert sample_count(3, 1 / 128) == 1


def test_pack_message_sizes(rng):
    clusters = [PointCluster(points=rng.normal(size=(64, 3)), center=[0, 0, 0]),
                PointCluster(points=rng.normal(size=(8, 3)), center=[0, 0, 0])]
    same = pack_message(clusters, PackingParams(zeta=1.0), Pose(), 1)
    assert [c.n_points for c in same.clusters] == [64, 8]
    small = pack_message(clusters, PackingParams(zeta=1 / 8), Pose(), 1)
    assert [c.n_points for c in small.clusters] == [8, 1]
    quarter = pack_message(clusters[:1], PackingParams(zeta=0.25), Pose(), 1)
    assert quarter.clusters[0].n_points == 16
    assert packed_comm(clusters, 1 / 8).n_values == comm_volume(small).n_values


def test_pack_keeps_subset_of_points(rng):
    c = PointCluster(points=rng.normal(size=(40, 3)), center=[0, 0, 0],
                     semantic_scores=rng.uniform(size=40))
    out = pack_message([c], PackingParams(zeta=0.25), Pose(), 1).clusters[0]
    rows = {tuple(p) for p in c.points.tolist()}
    assert all(tuple(p) in rows for p in out.points.tolist())
    assert np.array_equal(out.center, c.center)


def test_params_validation():
    with pytest.raises(ValueError):
        PackingParams(zeta=0.0)
    with pytest.raises(ValueError):
        PackingParams(zeta=1.5)
    with pytest.raises(ValueError):
        PackingParams(lambda_s=-1)


# --- density ---------------------------------------------------------------

def test_kde_examples():
    assert kde_density_scores(np.zeros((1, 3))).tolist() == [1.0]
    pts = np.vstack([np.zeros((10, 3)), [[50.0, 0, 0]]])
    s = kde_density_scores(pts, 0.5)
    assert s[-1] == 1.0 and np.all(s[:10] == 0.0)
    line = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0]])
    s = kde_density_scores(line, 1.0)
    # direct Gaussian sums: ends 1 + e^-0.5 + e^-2, middle 1 + 2 e^-0.5
    ends, mid = 1 + math.exp(-0.5) + math.exp(-2), 1 + 2 * math.exp(-0.5)
    assert mid > ends
    assert s[1] == 0.0 and s[0] == s[2] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.floats(0.1, 3.0), st.integers(0, 10**6))
def test_kde_range(n, h, seed):
    pts = np.random.default_rng(seed).normal(size=(n, 3))
    s = kde_density_scores(pts, h)
    assert s.shape == (n,) and np.all((s >= 0) & (s <= 1))


# --- SD-FPS ----------------------------------------------------------------

def test_sd_fps_line_example():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [2.0, 0, 0], [10.0, 0, 0]])
    ones = np.ones(4)
    assert sorted(sd_fps(pts, ones, ones, 0.5)) == [0, 3]


def test_sd_fps_zeta_one_is_permutation(rng):
    pts = rng.normal(size=(25, 3))
    idx = sd_fps(pts, rng.uniform(size=25), rng.uniform(size=25), 1.0)
    assert sorted(idx) == list(range(25))


def test_sd_fps_first_pick_and_weighting():
    pts = np.array([[0.0, 0, 0], [1.0, 0, 0], [5.0, 0, 0], [5.5, 0, 0]])
    s_f = np.array([0.1, 1.0, 1.0, 0.2])
    s_d = np.array([1.0, 0.95, 0.5, 0.5])
    idx = sd_fps(pts, s_f, s_d, 0.5)
    assert idx[0] == 1  # argmax of s_f + s_d
    # second pick: weights * distance from x=1 -> [0.1, -, 2.0, 0.45]
    assert idx[1] == 2


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 80), st.sampled_from([1.0, 0.5, 0.25, 0.125]), st.integers(0, 10**6))
def test_sd_fps_reduces_to_vanilla(n, zeta, seed):
    rng = np.random.default_rng(seed)
    pts = rng.normal(size=(n, 3))
    u = np.full(n, 0.7)
    got = sd_fps(pts, u, u, zeta, 0.0, 0.0)
    assert got == vanilla_fps(pts.tolist(), sample_count(n, zeta))


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 60), st.floats(0.01, 1.0), st.integers(0, 10**6))
def test_sd_fps_distinct_and_count(n, zeta, seed):
    rng = np.random.default_rng(seed)
    idx = sd_fps(rng.normal(size=(n, 3)), rng.uniform(size=n), rng.uniform(size=n), zeta)
    assert len(idx) == sample_count(n, zeta) == len(set(idx))


def test_sd_fps_input_errors():
    with pytest.raises(ValueError):
        sd_fps(np.zeros((0, 3)), [], [], 1.0)
    with pytest.raises(ValueError):
        sd_fps(np.zeros((3, 3)), np.ones(2), np.ones(3), 1.0)


# --- proposals and override ------------------------------------------------

def test_proposal_exact_with_zero_noise():
    gt = OrientedBox([10, 0, 0.8], (1.6, 1.9, 4.4), 0.3)
    c = PointCluster(points=[[10, 0.5, 0.8]], center=[10.2, 0.1, 0.8])
    far = PointCluster(points=[[110, 0, 0]], center=[110, 0, 0])
    out = generate_proposals([c, far], [gt], ZERO, 0)
    assert len(out) == 1
    assert np.array_equal(out[0].proposal.as_array()[:7], gt.as_array()[:7])
    assert 0.5 <= out[0].proposal.confidence <= 1.0


def test_proposal_center_on_edge_is_kept():
    gt = OrientedBox([0, 0, 0], (2, 2, 4), 0.0)
    c = PointCluster(points=[[2, 0, 0]], center=[2.0, 1.0, 0.0])
    assert len(generate_proposals([c], [gt], ZERO, 0)) == 1


def test_proposals_do_not_depend_on_filtering():
    gt = OrientedBox([0, 0, 0], (2, 2, 4), 0.0)
    inside = PointCluster(points=[[0, 0, 0]], center=[0, 0, 0])
    outside = PointCluster(points=[[50, 0, 0]], center=[50, 0, 0])
    noise = ProposalNoise()
    a = generate_proposals([inside, outside, inside], [gt], noise, 4)
    b = generate_proposals([inside, inside, inside], [gt], noise, 4)
    assert a[1].proposal.as_array().tolist() == b[2].proposal.as_array().tolist()


def test_override_points():
    pts = np.array([[0, 0, 0], [0.5, 0, 0], [1.5, 0, 0], [1.8, 0, 0], [1.9, 0.1, 0],
                    [30, 0, 0]], float)
    scores = np.array([0.9, 0.9, 0.9, 0.9, 0.9, 0.9])
    full = cloud(pts, scores)
    tight = OrientedBox([0.25, 0, 0], (1, 1, 0.5), 0.0)
    c = PointCluster(points=pts[:2], center=[0.25, 0, 0], proposal=tight)
    assert np.array_equal(override_points(c, full).points, pts[:2])
    grown = override_points(c.replace(proposal=OrientedBox([1, 0, 0], (1, 1, 2.2))), full)
    inside = grown.proposal.contains(pts)
    assert grown.n_points == c.n_points + 3 == inside.sum()
    empty = override_points(c.replace(proposal=OrientedBox([-20, 0, 0], (1, 1, 1))), full)
    assert np.array_equal(empty.points, c.points)
    low = override_points(c.replace(proposal=OrientedBox([1, 0, 0], (1, 1, 2.2))),
                          cloud(pts, np.full(6, 0.1)))
    assert np.array_equal(low.points, c.points)
