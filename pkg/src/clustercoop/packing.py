"""Sender-side packing of point clusters.

Proposal generation (ground-truth oracle), point override, density scores,
semantic- and distribution-guided farthest point sampling, and the
communication-volume bookkeeping used for bandwidth control.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .geometry import AgentMessage, OrientedBox, PointCluster, Pose
from .scene import LabeledPointCloud

SCORE_FLOOR = 1e-6
BOX_SCALARS = 8
CENTER_SCALARS = 3


@dataclass(frozen=True)
class ProposalNoise:
    center_sigma: float = 0.1
    size_sigma: float = 0.05
    yaw_sigma: float = 0.02


@dataclass(frozen=True)
class PackingParams:
    zeta: float = 1.0
    lambda_s: float = 1.0
    lambda_d: float = 1.0
    kde_bandwidth: float = 0.5
    proposal_noise: ProposalNoise = ProposalNoise()
    half_precision: bool = True
    include_scores: bool = False

    def __post_init__(self):
        if not 0.0 < self.zeta <= 1.0:
            raise ValueError(f"zeta must lie in (0, 1], got {self.zeta}")
        if self.lambda_s < 0 or self.lambda_d < 0:
            raise ValueError("lambda_s and lambda_d must be >= 0")
        if self.kde_bandwidth <= 0:
            raise ValueError("kde_bandwidth must be positive")


@dataclass(frozen=True)
class CommReport:
    n_values: int
    bytes: int
    comm_log2: float


def comm_report(n_values: int) -> CommReport:
    """fp16 accounting: two bytes per transmitted scalar, volume in log2 bytes."""
    n_bytes = 2 * n_values
    return CommReport(n_values, n_bytes, math.log2(n_bytes) if n_bytes > 0 else -math.inf)


def cluster_scalar_count(n_points: int, feature_dim: int, include_scores: bool = False) -> int:
    return 3 * n_points + CENTER_SCALARS + feature_dim + BOX_SCALARS + (
        n_points if include_scores else 0
    )


def comm_volume(message: AgentMessage, include_scores: bool = False) -> CommReport:
    n = sum(
        cluster_scalar_count(c.n_points, len(c.feature), include_scores)
        for c in message.clusters
    )
    return comm_report(n)


def sample_count(n_points: int, zeta: float) -> int:
    return max(1, int(math.floor(n_points * zeta)))


# --- proposals -------------------------------------------------------------

def generate_proposals(
    clusters: Sequence[PointCluster],
    truth: Sequence[OrientedBox],
    noise: ProposalNoise,
    seed: int,
) -> list[PointCluster]:
    """Keep clusters whose center falls inside a ground-truth box and attach a proposal.

    ``truth`` must be in the same frame as the clusters. The proposal is the
    containing box perturbed by Gaussian noise, with confidence drawn from
    U(0.5, 1). Boundaries count as inside.
    """
    rng = np.random.default_rng(seed)
    out = []
    for c in clusters:
        # draws happen for every cluster so outcomes don't depend on filtering
        dc = rng.normal(size=3)
        ds = rng.normal(size=3)
        dyaw = rng.normal()
        conf = rng.uniform(0.5, 1.0)
        hit = next((b for b in truth if b.contains(c.center[None])[0]), None)
        if hit is None:
            continue
        center = hit.center + noise.center_sigma * dc
        size = np.maximum(np.asarray(hit.size) + noise.size_sigma * ds, 0.1)
        box = OrientedBox(center, tuple(size), hit.yaw + noise.yaw_sigma * dyaw, conf)
        out.append(c.replace(proposal=box))
    return out


def override_points(
    cluster: PointCluster, cloud: LabeledPointCloud, fg_threshold: float = 0.5
) -> PointCluster:
    """Replace a cluster's points by all foreground candidates inside its proposal."""
    if cluster.proposal is None:
        raise ValueError("override_points needs a cluster with a proposal")
    cand = cloud.semantic_scores >= fg_threshold
    inside = np.zeros(len(cloud), dtype=bool)
    if cand.any():
        inside[cand] = cluster.proposal.contains(cloud.positions[cand])
    if not inside.any():
        return cluster
    return cluster.replace(
        points=cloud.positions[inside], semantic_scores=cloud.semantic_scores[inside]
    )


# --- sampling --------------------------------------------------------------

def kde_density_scores(points: np.ndarray, bandwidth: float = 0.5) -> np.ndarray:
    """Min-max normalized inverse Gaussian kernel density; 1 marks the sparsest point."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 1:
        raise ValueError("kde_density_scores needs at least one point")
    d2 = np.sum((pts[:, None, :] - pts[None, :, :]) ** 2, axis=2)
    dens = np.exp(-d2 / (2.0 * bandwidth ** 2)).sum(axis=1)
    lo, hi = dens.min(), dens.max()
    if hi - lo <= 0.0:
        return np.ones(len(pts))
    return 1.0 - (dens - lo) / (hi - lo)


def sd_fps(points, s_f, s_d, zeta: float, lambda_s: float = 1.0, lambda_d: float = 1.0) -> list[int]:
    """Semantic- and distribution-guided farthest point sampling.

    Returns ``max(1, floor(N * zeta))`` indices in selection order. The first
    pick maximizes ``s_f + s_d``; every later pick maximizes
    ``s_f**lambda_s * s_d**lambda_d * d`` over unvisited points, where ``d``
    is the distance to the nearest selected point. Ties go to the smallest
    index.
    """
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    n = len(pts)
    if n == 0:
        raise ValueError("sd_fps needs at least one point")
    s_f = np.clip(np.asarray(s_f, dtype=float), SCORE_FLOOR, 1.0)
    s_d = np.clip(np.asarray(s_d, dtype=float), SCORE_FLOOR, 1.0)
    if s_f.shape != (n,) or s_d.shape != (n,):
        raise ValueError("score arrays must align with points")
    n_sample = sample_count(n, zeta)
    weight = s_f ** lambda_s * s_d ** lambda_d
    dist = np.full(n, np.inf)
    visited = np.zeros(n, dtype=bool)
    picked = []
    for step in range(n_sample):
        if step == 0:
            o = int(np.argmax(s_f + s_d))
        else:
            score = weight * dist
            score[visited] = -1.0
            o = int(np.argmax(score))
        picked.append(o)
        visited[o] = True
        np.minimum(dist, np.sqrt(np.sum((pts - pts[o]) ** 2, axis=1)), out=dist)
    return picked


def sample_cluster(cluster: PointCluster, params: PackingParams) -> PointCluster:
    s_d = kde_density_scores(cluster.points, params.kde_bandwidth)
    idx = np.array(
        sd_fps(cluster.points, cluster.semantic_scores, s_d,
               params.zeta, params.lambda_s, params.lambda_d)
    )
    return cluster.replace(points=cluster.points[idx], semantic_scores=cluster.semantic_scores[idx])


def pack_message(
    clusters: Sequence[PointCluster], params: PackingParams, pose: Pose, agent_id: int,
    timestamp: float = 0.0,
) -> AgentMessage:
    """Subsample every cluster's points; centers, features and proposals pass through."""
    packed = clusters if params.zeta >= 1.0 else [sample_cluster(c, params) for c in clusters]
    return AgentMessage(tuple(packed), pose, agent_id, timestamp)


def packed_comm(
    clusters: Sequence[PointCluster], zeta: float, include_scores: bool = False
) -> CommReport:
    """Volume a message would have after sampling at ``zeta``, without sampling."""
    n = sum(
        cluster_scalar_count(sample_count(c.n_points, zeta), len(c.feature), include_scores)
        for c in clusters
    )
    return comm_report(n)
