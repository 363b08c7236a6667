"""Poses, oriented boxes and the point-cluster data model.

Poses are 4-DoF (x, y, z, yaw); roll and pitch are fixed at zero. Every
pose constructor normalizes yaw to [-pi, pi).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a: float) -> float:
    """Map an angle onto [-pi, pi)."""
    w = math.fmod(a + math.pi, TWO_PI)
    if w < 0.0:
        w += TWO_PI
    w -= math.pi
    # fmod rounding can land exactly on +pi
    if w >= math.pi:
        w -= TWO_PI
    return w


def angle_diff(a: float, b: float) -> float:
    """Smallest signed difference a - b."""
    return wrap_angle(a - b)


def rot2(yaw: float) -> np.ndarray:
    c, s = math.cos(yaw), math.sin(yaw)
    return np.array([[c, -s], [s, c]])


@dataclass(frozen=True)
class Pose:
    """Planar pose with height: translation (x, y, z) and heading ``yaw``."""

    x: float = 0.0
    y: float = 0.0
    z: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z", "yaw"):
            v = float(getattr(self, name))
            if not math.isfinite(v):
                raise ValueError(f"pose component {name} must be finite, got {v}")
            object.__setattr__(self, name, v)
        object.__setattr__(self, "yaw", wrap_angle(self.yaw))

    @classmethod
    def identity(cls) -> "Pose":
        return cls()

    def matrix(self) -> np.ndarray:
        """4x4 homogeneous transform."""
        m = np.eye(4)
        m[:2, :2] = rot2(self.yaw)
        m[:3, 3] = (self.x, self.y, self.z)
        return m

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> "Pose":
        return cls(m[0, 3], m[1, 3], m[2, 3], math.atan2(m[1, 0], m[0, 0]))

    def compose(self, other: "Pose") -> "Pose":
        return pose_compose(self, other)

    def inverse(self) -> "Pose":
        return pose_inverse(self)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map (N, 3) points (or a single 3-vector) from this pose's frame to its parent."""
        pts = np.asarray(points, dtype=float)
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(pts)
        out[..., 0] = c * pts[..., 0] - s * pts[..., 1] + self.x
        out[..., 1] = s * pts[..., 0] + c * pts[..., 1] + self.y
        out[..., 2] = pts[..., 2] + self.z
        return out

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z, self.yaw])

    def is_close(self, other: "Pose", tol: float = 1e-9) -> bool:
        return (
            abs(self.x - other.x) <= tol
            and abs(self.y - other.y) <= tol
            and abs(self.z - other.z) <= tol
            and abs(angle_diff(self.yaw, other.yaw)) <= tol
        )


def pose_compose(a: Pose, b: Pose) -> Pose:
    """Homogeneous product ``a @ b`` for yaw-only rotations."""
    c, s = math.cos(a.yaw), math.sin(a.yaw)
    return Pose(
        a.x + c * b.x - s * b.y,
        a.y + s * b.x + c * b.y,
        a.z + b.z,
        a.yaw + b.yaw,
    )


def pose_inverse(p: Pose) -> Pose:
    c, s = math.cos(p.yaw), math.sin(p.yaw)
    return Pose(-(c * p.x + s * p.y), -(-s * p.x + c * p.y), -p.z, -p.yaw)


def relative_pose(ego: Pose, other: Pose) -> Pose:
    """Pose of ``other`` expressed in the frame of ``ego``: ego^-1 * other."""
    return pose_compose(pose_inverse(ego), other)


@dataclass(frozen=True)
class OrientedBox:
    """3D box with yaw about z.

    ``size`` is (h, w, l): height along z, width along the local y axis and
    length along the heading (local x axis). ``center`` is the volumetric
    center.
    """

    center: np.ndarray
    size: tuple
    yaw: float = 0.0
    confidence: float = 1.0

    def __post_init__(self):
        center = np.asarray(self.center, dtype=float).reshape(3)
        size = tuple(float(v) for v in self.size)
        if len(size) != 3 or not min(size) > 0.0 or not all(map(math.isfinite, size)):
            raise ValueError(f"box sizes must be three positive values, got {size}")
        if not (np.all(np.isfinite(center)) and math.isfinite(self.yaw)):
            raise ValueError("box center and yaw must be finite")
        if not 0.0 <= float(self.confidence) <= 1.0:
            raise ValueError(f"confidence must lie in [0, 1], got {self.confidence}")
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "size", size)
        object.__setattr__(self, "yaw", wrap_angle(float(self.yaw)))
        object.__setattr__(self, "confidence", float(self.confidence))

    @property
    def h(self) -> float:
        return self.size[0]

    @property
    def w(self) -> float:
        return self.size[1]

    @property
    def l(self) -> float:  # noqa: E743
        return self.size[2]

    def as_array(self) -> np.ndarray:
        """(x, y, z, h, w, l, yaw, confidence), the eight transmitted box scalars."""
        return np.array([*self.center, *self.size, self.yaw, self.confidence])

    @classmethod
    def from_array(cls, a) -> "OrientedBox":
        a = np.asarray(a, dtype=float)
        return cls(a[:3], (a[3], a[4], a[5]), a[6], a[7])

    def corners_2d(self) -> np.ndarray:
        """Footprint corners (4, 2), counter-clockwise."""
        hl, hw = self.l / 2.0, self.w / 2.0
        local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
        return local @ rot2(self.yaw).T + self.center[:2]

    def to_local(self, points: np.ndarray) -> np.ndarray:
        """Express world points in the box frame (origin at center, x along heading)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        d = pts - self.center
        c, s = math.cos(self.yaw), math.sin(self.yaw)
        out = np.empty_like(d)
        out[:, 0] = c * d[:, 0] + s * d[:, 1]
        out[:, 1] = -s * d[:, 0] + c * d[:, 1]
        out[:, 2] = d[:, 2]
        return out

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """Closed point-in-box test; faces count as inside."""
        loc = self.to_local(points)
        half = np.array([self.l, self.w, self.h]) / 2.0 + margin
        return np.all(np.abs(loc) <= half, axis=1)

    def transformed(self, t: Pose) -> "OrientedBox":
        return replace(self, center=t.apply(self.center), yaw=self.yaw + t.yaw)

    def with_confidence(self, confidence: float) -> "OrientedBox":
        return replace(self, confidence=confidence)


def _frozen(a, shape_tail=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape_tail is not None:
        arr = arr.reshape((-1,) + shape_tail)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class PointCluster:
    """One collaborative message unit: points, center, feature and proposal.

    ``object_id`` and ``source`` are simulation bookkeeping. They are never
    serialized, and matching/merging never reads ``object_id``; ``source``
    carries the sending agent's id on the receiving side.
    """

    points: np.ndarray
    center: np.ndarray
    feature: np.ndarray = field(default_factory=lambda: np.zeros(0))
    proposal: Optional[OrientedBox] = None
    semantic_scores: Optional[np.ndarray] = None
    object_id: Optional[int] = None
    source: Optional[int] = None

    def __post_init__(self):
        pts = _frozen(self.points, (3,))
        if len(pts) < 1:
            raise ValueError("a point cluster needs at least one point")
        center = _frozen(self.center).reshape(3)
        if not np.all(np.isfinite(center)):
            raise ValueError("cluster center must be finite")
        scores = self.semantic_scores
        scores = np.ones(len(pts)) if scores is None else np.array(scores, dtype=float)
        if scores.shape != (len(pts),):
            raise ValueError(
                f"semantic_scores has {scores.shape[0]} entries for {len(pts)} points"
            )
        scores.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "center", center)
        object.__setattr__(self, "feature", _frozen(self.feature).reshape(-1))
        object.__setattr__(self, "semantic_scores", scores)

    @property
    def n_points(self) -> int:
        return len(self.points)

    def replace(self, **changes) -> "PointCluster":
        return replace(self, **changes)

    def transformed(self, t: Pose) -> "PointCluster":
        return transform_cluster(self, t)

    def translated(self, offset) -> "PointCluster":
        off = np.asarray(offset, dtype=float)
        prop = self.proposal
        if prop is not None:
            prop = replace(prop, center=prop.center + off)
        return replace(self, points=self.points + off, center=self.center + off, proposal=prop)

    def equals(self, other: "PointCluster", tol: float = 0.0) -> bool:
        """Value comparison of the transmitted fields (bookkeeping ignored)."""
        if self.points.shape != other.points.shape or self.feature.shape != other.feature.shape:
            return False
        if (self.proposal is None) != (other.proposal is None):
            return False
        checks = [
            (self.points, other.points),
            (self.center, other.center),
            (self.feature, other.feature),
            (self.semantic_scores, other.semantic_scores),
        ]
        if self.proposal is not None:
            checks.append((self.proposal.as_array()[:6], other.proposal.as_array()[:6]))
            checks.append(([self.proposal.confidence], [other.proposal.confidence]))
            if abs(angle_diff(self.proposal.yaw, other.proposal.yaw)) > tol:
                return False
        return all(np.allclose(a, b, rtol=0.0, atol=tol) for a, b in checks)


def transform_cluster(c: PointCluster, t: Pose) -> PointCluster:
    """Rigidly move a cluster's points, center and proposal by ``t``."""
    prop = c.proposal.transformed(t) if c.proposal is not None else None
    return replace(c, points=t.apply(c.points), center=t.apply(c.center), proposal=prop)


@dataclass(frozen=True, eq=False)
class AgentMessage:
    """A sender's packed clusters together with its pose and send time."""

    clusters: tuple
    pose: Pose
    agent_id: int
    timestamp: float = 0.0

    def __post_init__(self):
        if self.timestamp < 0:
            raise ValueError(f"timestamp must be >= 0, got {self.timestamp}")
        object.__setattr__(self, "clusters", tuple(self.clusters))
        object.__setattr__(self, "timestamp", float(self.timestamp))

    def replace(self, **changes) -> "AgentMessage":
        return replace(self, **changes)

    def equals(self, other: "AgentMessage", tol: float = 0.0) -> bool:
        return (
            self.agent_id == other.agent_id
            and self.timestamp == other.timestamp
            and self.pose.is_close(other.pose, tol)
            and len(self.clusters) == len(other.clusters)
            and all(a.equals(b, tol) for a, b in zip(self.clusters, other.clusters))
        )
