"""Parameter-free corrections for pose error and transmission latency.

Pose correction treats matched cluster centers as landmarks: every agent
pose (ego held fixed) and every shared object position is adjusted so that
each object, mapped into an observing agent's frame, lands on that agent's
observed center. Latency compensation extrapolates clusters along their
displacement since the previous communication round.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .aggregation import match_components
from .geometry import AgentMessage, Pose, pose_compose, relative_pose, transform_cluster

log = logging.getLogger(__name__)


@dataclass
class PoseGraph:
    """Planar graph in the ego frame.

    ``agent_vertices`` maps agent id to its pose relative to the ego (the ego
    itself sits at the identity and never moves). ``edges`` are
    ``(agent_id, object_index, observed_center_xy)`` with the center in the
    observing agent's own frame.
    """

    agent_vertices: dict
    object_vertices: np.ndarray
    edges: list
    ego_id: int = 0

    @property
    def n_objects(self) -> int:
        return len(self.object_vertices)


@dataclass(frozen=True)
class LatencyParams:
    epsilon_lo: float = 0.5
    epsilon_hi: float = 2.0

    def __post_init__(self):
        if not 0.0 <= self.epsilon_lo < self.epsilon_hi:
            raise ValueError("need 0 <= epsilon_lo < epsilon_hi")


def build_pose_graph(
    ego_msg: AgentMessage, received_msgs: Sequence[AgentMessage], epsilon_pose: float = 1.5
) -> PoseGraph:
    agents = {ego_msg.agent_id: Pose()}
    items, local = [], []
    for c in ego_msg.clusters:
        items.append((ego_msg.agent_id, c))
        local.append(c.center[:2])
    for msg in received_msgs:
        rel = relative_pose(ego_msg.pose, msg.pose)
        agents[msg.agent_id] = Pose(rel.x, rel.y, 0.0, rel.yaw)
        for c in msg.clusters:
            items.append((msg.agent_id, transform_cluster(c, rel)))
            local.append(c.center[:2])
    components, _ = match_components(items, epsilon_pose)
    objects, edges = [], []
    for comp in components:
        if len(comp) < 2:
            continue
        s = len(objects)
        objects.append(np.mean([items[i][1].center[:2] for i in comp], axis=0))
        edges.extend((items[i][0], s, np.array(local[i], dtype=float)) for i in comp)
    return PoseGraph(agents, np.array(objects).reshape(-1, 2), edges, ego_msg.agent_id)


@dataclass
class PoseCorrection:
    agent_poses: dict
    object_positions: np.ndarray
    degenerate: bool = False
    iterations: int = 0
    initial_cost: float = 0.0
    final_cost: float = 0.0
    cost_history: list = field(default_factory=list)


def _unpack(x, free_agents, graph):
    poses = dict(graph.agent_vertices)
    for k, a in enumerate(free_agents):
        poses[a] = (x[3 * k], x[3 * k + 1], x[3 * k + 2])
    off = 3 * len(free_agents)
    return poses, x[off:].reshape(-1, 2)


def _residuals(x, free_agents, graph, with_jacobian=False):
    idx = {a: k for k, a in enumerate(free_agents)}
    n_par = len(x)
    off = 3 * len(free_agents)
    r = np.empty(2 * len(graph.edges))
    jac = np.zeros((len(r), n_par)) if with_jacobian else None
    for e, (agent, s, obs) in enumerate(graph.edges):
        if agent in idx:
            k = idx[agent]
            tx, ty, th = x[3 * k:3 * k + 3]
        else:
            p = graph.agent_vertices[agent]
            tx, ty, th = p.x, p.y, p.yaw
        ox, oy = x[off + 2 * s], x[off + 2 * s + 1]
        c, sn = math.cos(th), math.sin(th)
        dx, dy = ox - tx, oy - ty
        r[2 * e] = c * dx + sn * dy - obs[0]
        r[2 * e + 1] = -sn * dx + c * dy - obs[1]
        if with_jacobian:
            rows = slice(2 * e, 2 * e + 2)
            rt = np.array([[c, sn], [-sn, c]])
            jac[rows, off + 2 * s:off + 2 * s + 2] = rt
            if agent in idx:
                k = idx[agent]
                jac[rows, 3 * k:3 * k + 2] = -rt
                jac[rows, 3 * k + 2] = (-sn * dx + c * dy, -c * dx - sn * dy)
    return r, jac


def optimize_poses(
    graph: PoseGraph,
    max_iterations: int = 50,
    tol: float = 1e-6,
    initial_damping: float = 1e-3,
) -> PoseCorrection:
    """Levenberg-damped Gauss-Newton on the pose-consistency residuals.

    Only agents with at least one edge are free. Steps that raise the cost
    are rejected (damping x10), accepted steps divide the damping by 10.
    Stops when the residual norm drops by less than ``tol`` or after
    ``max_iterations``. A rank-deficient problem returns the initial poses
    with ``degenerate=True``.
    """
    init_objects = np.asarray(graph.object_vertices, dtype=float).reshape(-1, 2)
    if not graph.edges:
        raise ValueError("pose graph has no edges")
    free_agents = sorted({a for a, _, _ in graph.edges if a != graph.ego_id})
    x = np.concatenate(
        [np.array([[graph.agent_vertices[a].x, graph.agent_vertices[a].y,
                    graph.agent_vertices[a].yaw] for a in free_agents]).reshape(-1),
         init_objects.reshape(-1)]
    )
    r, jac = _residuals(x, free_agents, graph, True)
    cost = float(r @ r)
    result = PoseCorrection(dict(graph.agent_vertices), init_objects.copy(),
                            initial_cost=cost, final_cost=cost, cost_history=[cost])
    h = jac.T @ jac
    eig = np.linalg.eigvalsh(h)
    if len(eig) == 0 or eig[0] <= 1e-9 * max(eig[-1], 1.0):
        log.info("pose graph is under-constrained; keeping initial poses")
        result.degenerate = True
        return result
    if cost < 1e-24:
        return result

    damping = initial_damping
    it = 0
    while it < max_iterations:
        it += 1
        g = jac.T @ r
        step = np.linalg.solve(h + damping * np.eye(len(x)), -g)
        x_new = x + step
        r_new, jac_new = _residuals(x_new, free_agents, graph, True)
        cost_new = float(r_new @ r_new)
        if cost_new < cost:
            decrease = math.sqrt(cost) - math.sqrt(cost_new)
            x, r, jac, cost = x_new, r_new, jac_new, cost_new
            h = jac.T @ jac
            damping = max(damping / 10.0, 1e-12)
            result.cost_history.append(cost)
            if decrease < tol or cost < 1e-24:
                break
        else:
            damping *= 10.0
            if damping > 1e12:
                break
    poses, objects = _unpack(x, free_agents, graph)
    result.agent_poses = {
        a: (p if isinstance(p, Pose) else Pose(p[0], p[1], 0.0, p[2])) for a, p in poses.items()
    }
    result.object_positions = objects
    result.iterations = it
    result.final_cost = cost
    return result


def apply_pose_correction(
    ego_msg: AgentMessage, received: Sequence[AgentMessage], correction: PoseCorrection
) -> list[AgentMessage]:
    """Rewrite each received message's pose from its corrected relative pose."""
    out = []
    for msg in received:
        rel = correction.agent_poses.get(msg.agent_id)
        if rel is None or correction.degenerate:
            out.append(msg)
            continue
        orig = relative_pose(ego_msg.pose, msg.pose)
        fixed = Pose(rel.x, rel.y, orig.z, rel.yaw)
        out.append(msg.replace(pose=pose_compose(ego_msg.pose, fixed)))
    return out


def correct_poses(
    ego_msg: AgentMessage, received: Sequence[AgentMessage], epsilon_pose: float = 1.5
) -> tuple[list[AgentMessage], PoseCorrection | None]:
    graph = build_pose_graph(ego_msg, received, epsilon_pose)
    if not graph.edges:
        return list(received), None
    correction = optimize_poses(graph)
    return apply_pose_correction(ego_msg, received, correction), correction


def match_temporal(prev_clusters, cur_clusters, params: LatencyParams = LatencyParams()):
    """Greedy one-to-one pairing by ascending center distance within the allowed band.

    Returns ``(prev_index, cur_index)`` pairs in selection order.
    """
    cand = []
    for i, p in enumerate(prev_clusters):
        for j, c in enumerate(cur_clusters):
            d = float(np.linalg.norm(c.center - p.center))
            if params.epsilon_lo <= d <= params.epsilon_hi:
                cand.append((d, i, j))
    cand.sort()
    used_p, used_c, pairs = set(), set(), []
    for _, i, j in cand:
        if i in used_p or j in used_c:
            continue
        used_p.add(i)
        used_c.add(j)
        pairs.append((i, j))
    return pairs


def compensate_latency(
    previous: AgentMessage | None,
    message: AgentMessage,
    now: float,
    params: LatencyParams = LatencyParams(),
) -> AgentMessage:
    """Shift matched clusters by their estimated velocity times the delay.

    Matching happens in the sender's own frame, which assumes the sender
    did not move between the two rounds. Unmatched clusters pass through.
    """
    tau = now - message.timestamp
    if previous is None or tau <= 0.0:
        return message
    gap = message.timestamp - previous.timestamp
    if gap <= 0.0:
        log.warning("non-positive history gap %.3f s for agent %s; skipping compensation",
                    gap, message.agent_id)
        return message
    clusters = list(message.clusters)
    for i, j in match_temporal(previous.clusters, message.clusters, params):
        velocity = (message.clusters[j].center - previous.clusters[i].center) / gap
        clusters[j] = clusters[j].translated(velocity * tau)
    return message.replace(clusters=tuple(clusters))
