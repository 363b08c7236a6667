"""Synthetic traffic scenes and a LiDAR-like sensing oracle.

The oracle replaces the learned front end: it ray-casts a 2D sweep per agent,
labels every returned point with its object, and emits semantic scores and
center votes whose quality is governed by :class:`OracleNoise`.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .geometry import OrientedBox, Pose, pose_inverse


class SceneError(ValueError):
    """Raised when a scene cannot be built from its configuration."""


@dataclass(frozen=True)
class ObjectState:
    box: OrientedBox
    velocity: tuple = (0.0, 0.0)
    object_id: int = 0

    @property
    def speed(self) -> float:
        return math.hypot(*self.velocity)


@dataclass(frozen=True)
class AgentSpec:
    agent_id: int
    pose: Pose
    sensor_range: float = 80.0
    angular_resolution: float = math.radians(0.4)
    is_ego: bool = False

    def __post_init__(self):
        if self.sensor_range <= 0 or self.angular_resolution <= 0:
            raise SceneError("sensor_range and angular_resolution must be positive")


@dataclass(frozen=True)
class OracleNoise:
    center_sigma: float = 0.05
    score_flip_rate: float = 0.0
    bg_clutter_rate: float = 0.002

    def __post_init__(self):
        if min(self.center_sigma, self.score_flip_rate, self.bg_clutter_rate) < 0:
            raise SceneError("oracle noise parameters must be >= 0")
        if self.score_flip_rate > 1:
            raise SceneError("score_flip_rate must lie in [0, 1]")


@dataclass(frozen=True)
class SceneConfig:
    layout: str = "random"          # "random" or "occlusion"
    extent: float = 40.0            # objects placed in [-extent, extent]^2
    n_objects: int = 12
    speed_min: float = 0.0
    speed_max: float = 0.0
    object_size: tuple = (1.6, 1.9, 4.4)   # h, w, l
    size_jitter: float = 0.1        # relative, uniform
    vertical_channels: int = 8
    min_gap: float = 1.0
    agent_clearance: float = 4.0
    max_placement_tries: int = 2000


@dataclass(frozen=True)
class AgentsConfig:
    count: int = 2
    placement_radius: float = 20.0
    sensor_range: float = 80.0
    angular_resolution_deg: float = 0.4


@dataclass(frozen=True)
class Scene:
    objects: tuple
    agents: tuple
    time: float = 0.0
    vertical_channels: int = 8

    @property
    def ego(self) -> AgentSpec:
        return next(a for a in self.agents if a.is_ego)

    def agent(self, agent_id: int) -> AgentSpec:
        for a in self.agents:
            if a.agent_id == agent_id:
                return a
        raise KeyError(agent_id)

    def boxes_in_frame(self, pose: Pose) -> list[OrientedBox]:
        """Ground-truth boxes expressed in the frame of ``pose``."""
        inv = pose_inverse(pose)
        return [o.box.transformed(inv) for o in self.objects]


@dataclass(frozen=True, eq=False)
class LabeledPointCloud:
    """Per-point arrays for one agent's sweep, in the agent's local frame.

    ``object_ids`` uses -1 for background points.
    """

    positions: np.ndarray
    is_foreground: np.ndarray
    object_ids: np.ndarray
    semantic_scores: np.ndarray
    predicted_centers: np.ndarray
    agent_id: int = 0
    timestamp: float = 0.0

    def __len__(self) -> int:
        return len(self.positions)

    def subset(self, mask) -> "LabeledPointCloud":
        return replace(
            self,
            positions=self.positions[mask],
            is_foreground=self.is_foreground[mask],
            object_ids=self.object_ids[mask],
            semantic_scores=self.semantic_scores[mask],
            predicted_centers=self.predicted_centers[mask],
        )

    def foreground_counts(self) -> dict[int, int]:
        ids, counts = np.unique(self.object_ids[self.is_foreground], return_counts=True)
        return {int(i): int(c) for i, c in zip(ids, counts)}

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("x,y,z,fg,object_id,score\n")
        for p, fg, oid, s in zip(
            self.positions, self.is_foreground, self.object_ids, self.semantic_scores
        ):
            buf.write(f"{p[0]!r},{p[1]!r},{p[2]!r},{int(fg)},{int(oid)},{s!r}\n")
        return buf.getvalue()


def _make_box(rng, cfg: SceneConfig, xy, yaw) -> OrientedBox:
    jitter = 1.0 + cfg.size_jitter * rng.uniform(-1.0, 1.0, size=3)
    h, w, l = (np.asarray(cfg.object_size, dtype=float) * jitter).tolist()
    return OrientedBox((xy[0], xy[1], h / 2.0), (h, w, l), yaw, 1.0)


def _footprints_overlap(a: OrientedBox, b: OrientedBox, gap: float) -> bool:
    # conservative circle test keeps placement cheap and deterministic
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    return float(np.hypot(*(a.center[:2] - b.center[:2]))) < ra + rb + gap


def _random_agents(rng, agents_cfg: AgentsConfig) -> list[AgentSpec]:
    res = math.radians(agents_cfg.angular_resolution_deg)
    out = [AgentSpec(0, Pose(), agents_cfg.sensor_range, res, True)]
    n_other = agents_cfg.count - 1
    for k in range(n_other):
        ang = 2.0 * math.pi * k / n_other + rng.uniform(-0.3, 0.3)
        r = agents_cfg.placement_radius * rng.uniform(0.8, 1.2)
        x, y = r * math.cos(ang), r * math.sin(ang)
        out.append(AgentSpec(k + 1, Pose(x, y, 0.0, ang + math.pi), agents_cfg.sensor_range, res))
    return out


def _random_objects(rng, cfg: SceneConfig, agents: list[AgentSpec]) -> list[ObjectState]:
    objects: list[ObjectState] = []
    tries = 0
    while len(objects) < cfg.n_objects:
        tries += 1
        if tries > cfg.max_placement_tries:
            raise SceneError(
                f"could not place {cfg.n_objects} objects without overlap in "
                f"extent {cfg.extent} m after {cfg.max_placement_tries} tries"
            )
        xy = rng.uniform(-cfg.extent, cfg.extent, size=2)
        yaw = rng.uniform(-math.pi, math.pi)
        box = _make_box(rng, cfg, xy, yaw)
        if any(_footprints_overlap(box, o.box, cfg.min_gap) for o in objects):
            continue
        if any(
            math.hypot(box.center[0] - a.pose.x, box.center[1] - a.pose.y)
            < cfg.agent_clearance + 0.5 * math.hypot(box.l, box.w)
            for a in agents
        ):
            continue
        speed = rng.uniform(cfg.speed_min, cfg.speed_max) if cfg.speed_max > 0 else 0.0
        vel = (speed * math.cos(yaw), speed * math.sin(yaw))
        objects.append(ObjectState(box, vel, len(objects)))
    return objects


def _occlusion_layout(rng, cfg: SceneConfig, agents_cfg: AgentsConfig):
    """Pairs of objects on shared rays from the ego: the near one hides the far one.

    A second agent on the far side sees every hidden object.
    """
    if cfg.n_objects < 2 or cfg.n_objects % 2:
        raise SceneError("occlusion layout needs an even, positive object count")
    res = math.radians(agents_cfg.angular_resolution_deg)
    agents = [
        AgentSpec(0, Pose(), agents_cfg.sensor_range, res, True),
        AgentSpec(1, Pose(34.0, 0.0, 0.0, math.pi), agents_cfg.sensor_range, res),
    ]
    pairs = cfg.n_objects // 2
    spread = math.radians(35.0)
    bearings = np.linspace(-spread, spread, pairs) if pairs > 1 else np.zeros(1)
    objects = []
    for b in bearings:
        b = float(b) + rng.uniform(-1, 1) * math.radians(3.0)
        for rng_m in (9.0 + rng.uniform(-1, 1), 22.0 + rng.uniform(-1, 1)):
            xy = (rng_m * math.cos(b), rng_m * math.sin(b))
            yaw = b + math.pi / 2.0 + rng.uniform(-1, 1) * math.radians(5.0)
            objects.append(ObjectState(_make_box(rng, cfg, xy, yaw), (0.0, 0.0), len(objects)))
    return agents, objects


def generate_scene(config, seed: int) -> Scene:
    """Build a deterministic scene from ``config.scene`` and ``config.agents``."""
    cfg: SceneConfig = config.scene
    agents_cfg: AgentsConfig = config.agents
    if cfg.n_objects < 1:
        raise SceneError("a scene needs at least one object")
    if agents_cfg.count < 2:
        raise SceneError("a scene needs at least two agents")
    rng = np.random.default_rng(seed)
    if cfg.layout == "random":
        agents = _random_agents(rng, agents_cfg)
        objects = _random_objects(rng, cfg, agents)
    elif cfg.layout == "occlusion":
        if agents_cfg.count != 2:
            raise SceneError("occlusion layout is defined for exactly two agents")
        agents, objects = _occlusion_layout(rng, cfg, agents_cfg)
    else:
        raise SceneError(f"unknown layout {cfg.layout!r}")
    return Scene(tuple(objects), tuple(agents), 0.0, cfg.vertical_channels)


def step_scene(scene: Scene, dt: float) -> Scene:
    """Advance every object by ``velocity * dt`` (constant-velocity model)."""
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    moved = []
    for o in scene.objects:
        vx, vy = o.velocity
        c = o.box.center + np.array([vx * dt, vy * dt, 0.0])
        moved.append(replace(o, box=replace(o.box, center=c)))
    return replace(scene, objects=tuple(moved), time=scene.time + dt)


def ray_cast(origin_xy, yaw: float, n_rays: int, resolution: float, boxes, max_range: float):
    """Nearest hit along each ray of a planar sweep.

    Returns ``(dist, index)`` arrays of length ``n_rays``; rays without a hit
    within ``max_range`` have ``dist = inf`` and ``index = -1``.
    """
    bearings = yaw + resolution * np.arange(n_rays)
    d = np.stack([np.cos(bearings), np.sin(bearings)], axis=1)  # (K, 2)
    dist = np.full(n_rays, np.inf)
    idx = np.full(n_rays, -1, dtype=np.int64)
    if not boxes:
        return dist, idx
    o = np.asarray(origin_xy, dtype=float)
    corners = np.stack([b.corners_2d() for b in boxes])            # (M, 4, 2)
    p = corners.reshape(-1, 2)                                      # (4M, 2)
    q = np.roll(corners, -1, axis=1).reshape(-1, 2)
    e = q - p
    owner = np.repeat(np.arange(len(boxes)), 4)
    # o + t d = p + u e  ->  t = cross(p-o, e)/cross(d, e), u = cross(p-o, d)/cross(d, e)
    denom = d[:, None, 0] * e[None, :, 1] - d[:, None, 1] * e[None, :, 0]
    po = p - o
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (po[None, :, 0] * e[None, :, 1] - po[None, :, 1] * e[None, :, 0]) / denom
        u = (po[None, :, 0] * d[:, None, 1] - po[None, :, 1] * d[:, None, 0]) / denom
    ok = (np.abs(denom) > 1e-12) & (t > 1e-9) & (u >= 0.0) & (u <= 1.0) & (t <= max_range)
    t = np.where(ok, t, np.inf)
    best = np.argmin(t, axis=1)
    dist = t[np.arange(n_rays), best]
    idx = np.where(np.isfinite(dist), owner[best], -1)
    return dist, idx


def observe(scene: Scene, agent: AgentSpec, noise: OracleNoise, seed: int) -> LabeledPointCloud:
    """Sweep the scene from ``agent`` and label every return.

    One bearing per ``angular_resolution``; each bearing reports only its
    nearest object surface within range, sampled at ``vertical_channels``
    heights. Output coordinates are in the agent's local frame.
    """
    if agent not in scene.agents:
        raise SceneError(f"agent {agent.agent_id} is not part of the scene")
    rng = np.random.default_rng(seed)
    boxes = [o.box for o in scene.objects]
    n_rays = int(round(2.0 * math.pi / agent.angular_resolution))
    origin = np.array([agent.pose.x, agent.pose.y])
    dist, hit = ray_cast(origin, agent.pose.yaw, n_rays, agent.angular_resolution,
                         boxes, agent.sensor_range)
    bearings = agent.pose.yaw + agent.angular_resolution * np.arange(n_rays)
    rays = np.flatnonzero(hit >= 0)
    v = scene.vertical_channels
    frac = (np.arange(v) + 0.5) / v

    world, oids = [], []
    for k in rays:
        box = boxes[hit[k]]
        x = origin[0] + dist[k] * math.cos(bearings[k])
        y = origin[1] + dist[k] * math.sin(bearings[k])
        z = box.center[2] - box.h / 2.0 + box.h * frac
        world.append(np.column_stack([np.full(v, x), np.full(v, y), z]))
        oids.append(np.full(v, scene.objects[hit[k]].object_id))
    n_fg = len(rays) * v
    fg_world = np.concatenate(world) if world else np.zeros((0, 3))
    fg_ids = np.concatenate(oids) if oids else np.zeros(0, dtype=np.int64)
    centers_by_id = {o.object_id: o.box.center for o in scene.objects}
    fg_centers = np.array([centers_by_id[i] for i in fg_ids]).reshape(-1, 3)
    fg_scores = rng.uniform(0.7, 1.0, size=n_fg)
    fg_centers = fg_centers + rng.normal(0.0, 1.0, size=(n_fg, 3)) * noise.center_sigma

    # background clutter inside the sensor disk, outside every footprint
    area = math.pi * agent.sensor_range ** 2
    n_bg = int(rng.poisson(noise.bg_clutter_rate * area)) if noise.bg_clutter_rate > 0 else 0
    r = agent.sensor_range * np.sqrt(rng.uniform(0.0, 1.0, size=n_bg))
    th = rng.uniform(-math.pi, math.pi, size=n_bg)
    bg = np.column_stack([origin[0] + r * np.cos(th), origin[1] + r * np.sin(th),
                          rng.uniform(0.0, 2.0, size=n_bg)])
    if n_bg and boxes:
        inside = np.zeros(n_bg, dtype=bool)
        for b in boxes:
            inside |= b.contains(np.column_stack([bg[:, :2], np.full(n_bg, b.center[2])]))
        bg = bg[~inside]
    n_bg = len(bg)
    bg_scores = rng.uniform(0.0, 0.3, size=n_bg)

    positions = np.concatenate([fg_world, bg])
    scores = np.concatenate([fg_scores, bg_scores])
    flip = rng.uniform(size=len(scores)) < noise.score_flip_rate
    scores = np.where(flip, 1.0 - scores, scores)
    inv = pose_inverse(agent.pose)
    local = inv.apply(positions) if len(positions) else positions.reshape(0, 3)
    centers = np.concatenate([fg_centers, bg]) if len(positions) else positions.reshape(0, 3)
    centers = inv.apply(centers) if len(centers) else centers
    return LabeledPointCloud(
        positions=local,
        is_foreground=np.concatenate([np.ones(n_fg, bool), np.zeros(n_bg, bool)]),
        object_ids=np.concatenate([fg_ids, np.full(n_bg, -1, dtype=np.int64)]),
        semantic_scores=scores,
        predicted_centers=centers,
        agent_id=agent.agent_id,
        timestamp=scene.time,
    )


def scene_to_csv(scene: Scene) -> str:
    """Object table: id, center, size, yaw and velocity, one object per line."""
    buf = io.StringIO()
    buf.write("object_id,x,y,z,h,w,l,yaw,vx,vy\n")
    for o in scene.objects:
        b = o.box
        vals = [*b.center, *b.size, b.yaw, *o.velocity]
        buf.write(f"{o.object_id}," + ",".join(repr(float(v)) for v in vals) + "\n")
    return buf.getvalue()
