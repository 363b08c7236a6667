"""Point-cluster extraction from a labeled sweep.

Foreground points are grouped by their center votes (transitive closure of
the ``< epsilon_point`` relation) and each group is encoded by a stack of
set-abstraction layers with fixed, seeded weights shared by every agent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCluster
from .scene import LabeledPointCloud
from .spatial import OpCounter, radius_components


@dataclass(frozen=True)
class ClusteringParams:
    epsilon_point: float = 0.6
    fg_threshold: float = 0.5
    min_cluster_points: int = 3

    def __post_init__(self):
        if self.epsilon_point <= 0:
            raise ValueError("epsilon_point must be positive")
        if not 0.0 <= self.fg_threshold <= 1.0:
            raise ValueError("fg_threshold must lie in [0, 1]")
        if self.min_cluster_points < 1:
            raise ValueError("min_cluster_points must be >= 1")


def group_point_indices(
    centers: np.ndarray, epsilon: float, counter: OpCounter | None = None
) -> list[list[int]]:
    """Connected components of the graph joining votes closer than ``epsilon``."""
    return radius_components(centers, epsilon, counter)


def group_clusters(
    cloud: LabeledPointCloud, params: ClusteringParams, counter: OpCounter | None = None
) -> list[PointCluster]:
    """Group foreground-scored points into clusters (no features or proposals yet)."""
    keep = np.flatnonzero(cloud.semantic_scores >= params.fg_threshold)
    groups = group_point_indices(cloud.predicted_centers[keep], params.epsilon_point, counter)
    clusters = []
    for g in groups:
        if len(g) < params.min_cluster_points:
            continue
        idx = keep[g]
        ids = cloud.object_ids[idx]
        ids = ids[ids >= 0]
        majority = int(np.bincount(ids).argmax()) if len(ids) else None
        clusters.append(
            PointCluster(
                points=cloud.positions[idx],
                center=cloud.predicted_centers[idx].mean(axis=0),
                semantic_scores=cloud.semantic_scores[idx],
                object_id=majority,
                source=cloud.agent_id,
            )
        )
    return clusters


@dataclass(frozen=True, eq=False)
class SirLayerWeights:
    """Weights of one layer.

    ``w1``: (D + 3, D) applied to ``[features, offsets]``;
    ``w2``: (2D, D) applied to ``[per-point, max-pooled]``.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


@dataclass(frozen=True, eq=False)
class SirWeights:
    layers: tuple
    proj: np.ndarray    # (L * D, D)
    proj_b: np.ndarray  # (D,)

    @property
    def feature_dim(self) -> int:
        return self.proj.shape[1]

    @classmethod
    def seeded(cls, feature_dim: int = 128, n_layers: int = 6, seed: int = 0) -> "SirWeights":
        """He-scaled Gaussian weights from a fixed seed."""
        rng = np.random.default_rng(seed)
        d = feature_dim

        def dense(n_in, n_out):
            return rng.normal(0.0, np.sqrt(2.0 / n_in), size=(n_in, n_out)), np.zeros(n_out)

        layers = []
        for _ in range(n_layers):
            w1, b1 = dense(d + 3, d)
            w2, b2 = dense(2 * d, d)
            layers.append(SirLayerWeights(w1, b1, w2, b2))
        proj, proj_b = dense(n_layers * d, d)
        return cls(tuple(layers), proj, proj_b)


def _relu(x):
    return np.maximum(x, 0.0)


def sir_layer(points, center, point_feats, weights: SirLayerWeights) -> np.ndarray:
    """One layer: a per-point MLP on features plus offsets from the center, then
    an MLP on each point's output next to the max-pooled output of all points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    feats = np.atleast_2d(np.asarray(point_feats, dtype=float))
    if len(points) != len(feats) or len(points) < 1:
        raise ValueError(f"{len(points)} points but {len(feats)} feature rows")
    if weights.w1.shape[0] != feats.shape[1] + 3:
        raise ValueError(
            f"layer expects {weights.w1.shape[0] - 3} input channels, got {feats.shape[1]}"
        )
    offsets = points - np.asarray(center, dtype=float)
    tilde = _relu(np.concatenate([feats, offsets], axis=1) @ weights.w1 + weights.b1)
    pooled = np.broadcast_to(tilde.max(axis=0), tilde.shape)
    return _relu(np.concatenate([tilde, pooled], axis=1) @ weights.w2 + weights.b2)


def extract_cluster_feature(cluster: PointCluster, weights: SirWeights) -> np.ndarray:
    d = weights.feature_dim
    feats = np.zeros((cluster.n_points, d))
    outputs = []
    for layer in weights.layers:
        feats = sir_layer(cluster.points, cluster.center, feats, layer)
        outputs.append(feats)
    stacked = np.concatenate(outputs, axis=1) @ weights.proj + weights.proj_b
    return stacked.max(axis=0)


def encode_clusters(
    cloud: LabeledPointCloud,
    params: ClusteringParams,
    weights: SirWeights,
    counter: OpCounter | None = None,
) -> list[PointCluster]:
    """Group and attach a feature vector to every cluster."""
    return [
        c.replace(feature=extract_cluster_feature(c, weights))
        for c in group_clusters(cloud, params, counter)
    ]
