"""Receiver-side fusion of point clusters from several agents."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

from .geometry import AgentMessage, OrientedBox, PointCluster, relative_pose, transform_cluster
from .spatial import OpCounter, UnionFind, grid_neighbor_pairs


@dataclass(frozen=True)
class AggregationParams:
    epsilon_agg: float = 0.6

    def __post_init__(self):
        if self.epsilon_agg <= 0:
            raise ValueError("epsilon_agg must be positive")


@dataclass
class MatchResult:
    unique: list = field(default_factory=list)
    shared: list = field(default_factory=list)  # tuples of clusters, one per agent


def _flatten(ego_clusters, received_per_agent, ego_id):
    items = [(ego_id, c) for c in ego_clusters]
    for agent_id in sorted(received_per_agent):
        items.extend((agent_id, c) for c in received_per_agent[agent_id])
    return items


def match_components(items, epsilon: float, counter: OpCounter | None = None):
    """Group ``(agent_id, cluster)`` items into match components.

    Two clusters match when they come from different agents and their
    centers are closer than ``epsilon``. Within a component each agent keeps
    only its cluster nearest to the component centroid. Returns
    ``(components, demoted)`` as lists of item indices.
    """
    if not items:
        return [], []
    centers = np.array([c.center for _, c in items])
    agents = [a for a, _ in items]
    agent_arr = np.array(agents)
    pairs = grid_neighbor_pairs(centers, epsilon, counter)
    pairs = pairs[agent_arr[pairs[:, 0]] != agent_arr[pairs[:, 1]]]
    uf = UnionFind(len(items), counter)
    uf.union_pairs(pairs)
    components, demoted = [], []
    for group in uf.groups():
        if len(group) == 1:
            components.append(group)
            continue
        centroid = centers[group].mean(axis=0)
        best: dict = {}
        for i in group:
            d = float(np.sum((centers[i] - centroid) ** 2))
            if agents[i] not in best or d < best[agents[i]][0]:
                best[agents[i]] = (d, i)
        keep = sorted(i for _, i in best.values())
        components.append(keep)
        demoted.extend(i for i in group if i not in keep)
    return components, demoted


def match_clusters(
    ego_clusters: Sequence[PointCluster],
    received_per_agent: Mapping[int, Sequence[PointCluster]],
    epsilon_agg: float = 0.6,
    ego_id: int = 0,
    counter: OpCounter | None = None,
) -> MatchResult:
    """Split clusters (all in the ego frame) into unique ones and cross-agent tuples."""
    items = _flatten(ego_clusters, received_per_agent, ego_id)
    items = [(a, c if c.source == a else c.replace(source=a)) for a, c in items]
    components, demoted = match_components(items, epsilon_agg, counter)
    result = MatchResult()
    unique_idx = list(demoted)
    for comp in components:
        if len(comp) >= 2:
            result.shared.append(tuple(items[i][1] for i in comp))
        else:
            unique_idx.extend(comp)
    result.unique = [items[i][1] for i in sorted(unique_idx)]
    return result


def _member_key(c: PointCluster):
    return (c.source if c.source is not None else -1, *c.center.tolist())


def merge_tuple(members: Sequence[PointCluster]) -> PointCluster:
    """Fuse clusters of one object: point union, mean center and feature, best box.

    The box with the highest confidence wins; ties go to the lowest agent id.
    Members are put in canonical order first, so the result does not depend
    on how the tuple was ordered.
    """
    if len(members) < 2:
        raise ValueError("merge_tuple needs at least two clusters")
    ordered = sorted(members, key=_member_key)
    boxes = [c for c in ordered if c.proposal is not None]
    best = None
    if boxes:
        top = max(c.proposal.confidence for c in boxes)
        best = next(c for c in boxes if c.proposal.confidence == top).proposal
    return PointCluster(
        points=np.concatenate([c.points for c in ordered]),
        center=np.mean([c.center for c in ordered], axis=0),
        feature=np.mean([c.feature for c in ordered], axis=0),
        proposal=best,
        semantic_scores=np.concatenate([c.semantic_scores for c in ordered]),
        object_id=ordered[0].object_id,
        source=ordered[0].source,
    )


def refit_box(cluster: PointCluster) -> OrientedBox:
    """Grow the proposal to the merged points' extent where they exceed it.

    Per local axis: if the points span more than the proposal, adopt the
    points' tight bounds; otherwise keep the proposal's extent and center.
    Yaw and confidence are unchanged.
    """
    box = cluster.proposal
    if box is None:
        raise ValueError("refit_box needs a cluster with a proposal")
    loc = box.to_local(cluster.points)
    lo, hi = loc.min(axis=0), loc.max(axis=0)
    size_xyz = np.array([box.l, box.w, box.h])
    tight = hi - lo
    grow = tight > size_xyz
    if not grow.any():
        return box
    new_size = np.where(grow, tight, size_xyz)
    shift_local = np.where(grow, (lo + hi) / 2.0, 0.0)
    c, s = np.cos(box.yaw), np.sin(box.yaw)
    shift = np.array([
        c * shift_local[0] - s * shift_local[1],
        s * shift_local[0] + c * shift_local[1],
        shift_local[2],
    ])
    return replace(box, center=box.center + shift,
                   size=(new_size[2], new_size[1], new_size[0]))


def aggregate(
    ego_msg: AgentMessage,
    received_msgs: Sequence[AgentMessage],
    params: AggregationParams = AggregationParams(),
    counter: OpCounter | None = None,
) -> list[PointCluster]:
    """Transform received clusters into the ego frame, match, merge and refit."""
    counter = counter if counter is not None else OpCounter()
    per_agent: dict[int, list[PointCluster]] = {}
    for msg in received_msgs:
        t = relative_pose(ego_msg.pose, msg.pose)
        per_agent.setdefault(msg.agent_id, []).extend(
            transform_cluster(c, t).replace(source=msg.agent_id) for c in msg.clusters
        )
        counter.add("transform", len(msg.clusters))
    result = match_clusters(ego_msg.clusters, per_agent, params.epsilon_agg,
                            ego_msg.agent_id, counter)
    merged = [merge_tuple(t) for t in result.shared]
    counter.add("merge", sum(len(t) for t in result.shared))
    out = list(result.unique)
    for c in merged:
        if c.proposal is not None:
            c = c.replace(proposal=refit_box(c))
            counter.add("refit")
        out.append(c)
    return out
