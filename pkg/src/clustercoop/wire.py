"""Binary wire format for :class:`AgentMessage`.

Little-endian layout::

    magic      4s   b"PCV1" (b"PCV" + format version byte)
    agent_id   u32
    timestamp  f64
    pose       4 x f32   (x, y, z, yaw)
    n_clusters u32
    flags      u16   bit 0: per-point scores present
                     bit 1: full precision (f32 instead of f16 payload fields)
    feat_dim   u16
    per cluster:
      n_points u32
      center   3 x f32
      feature  feat_dim x f16
      box      8 x f32   (x, y, z, h, w, l, yaw, confidence; NaN when absent)
      points   n_points x 3 x f16   offsets from the cluster center
      scores   n_points x f16       only when flag bit 0 is set

Points travel as offsets from the center so half precision keeps
millimetre-level resolution regardless of range.
"""
from __future__ import annotations

import struct

import numpy as np

from .geometry import AgentMessage, OrientedBox, PointCluster, Pose

MAGIC_PREFIX = b"PCV"
VERSION = b"1"
FLAG_SCORES = 0x1
FLAG_FULL_PRECISION = 0x2

_HEADER = struct.Struct("<4sId4fIHH")
_CLUSTER_HEAD = struct.Struct("<I3f")
_F16_MAX = float(np.finfo(np.float16).max)


class WireFormatError(ValueError):
    """Base class for undecodable payloads."""


class TruncatedMessageError(WireFormatError):
    pass


class BadMagicError(WireFormatError):
    pass


class VersionMismatchError(WireFormatError):
    pass


class TrailingBytesError(WireFormatError):
    pass


def _payload_dtype(flags: int):
    return np.dtype("<f4") if flags & FLAG_FULL_PRECISION else np.dtype("<f2")


def _flags(include_scores: bool, half_precision: bool) -> int:
    return (FLAG_SCORES if include_scores else 0) | (0 if half_precision else FLAG_FULL_PRECISION)


def _to_payload(a, dtype) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if dtype == np.float16:
        a = np.clip(a, -_F16_MAX, _F16_MAX)
    return a.astype(dtype)


def serialize(message: AgentMessage, include_scores: bool = False,
              half_precision: bool = True) -> bytes:
    flags = _flags(include_scores, half_precision)
    dt = _payload_dtype(flags)
    dims = {len(c.feature) for c in message.clusters}
    if len(dims) > 1:
        raise ValueError(f"clusters carry mixed feature lengths {sorted(dims)}")
    feat_dim = dims.pop() if dims else 0
    p = message.pose
    parts = [
        _HEADER.pack(MAGIC_PREFIX + VERSION, message.agent_id, message.timestamp,
                     p.x, p.y, p.z, p.yaw, len(message.clusters), flags, feat_dim)
    ]
    for c in message.clusters:
        center32 = c.center.astype("<f4")
        parts.append(_CLUSTER_HEAD.pack(c.n_points, *center32.tolist()))
        parts.append(_to_payload(c.feature, dt).tobytes())
        box = c.proposal.as_array() if c.proposal is not None else np.full(8, np.nan)
        parts.append(box.astype("<f4").tobytes())
        # offsets relative to the f32 center the receiver will see
        parts.append(_to_payload(c.points - center32.astype(float), dt).tobytes())
        if include_scores:
            parts.append(_to_payload(c.semantic_scores, dt).tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = memoryview(buf)
        self.pos = 0

    def take(self, n: int) -> memoryview:
        if n < 0 or self.pos + n > len(self.buf):
            raise TruncatedMessageError(
                f"need {n} bytes at offset {self.pos}, only {len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos:self.pos + n]
        self.pos += n
        return out

    def array(self, dtype, count: int) -> np.ndarray:
        return np.frombuffer(self.take(dtype.itemsize * count), dtype=dtype, count=count)


def deserialize(data: bytes) -> AgentMessage:
    """Decode a payload produced by :func:`serialize`.

    Raises a :class:`WireFormatError` subclass for every malformed input.
    """
    r = _Reader(bytes(data))
    if len(data) >= 4 and bytes(data[:3]) != MAGIC_PREFIX:
        raise BadMagicError(f"bad magic {bytes(data[:4])!r}")
    head = r.take(_HEADER.size)
    magic, agent_id, ts, x, y, z, yaw, n_clusters, flags, feat_dim = _HEADER.unpack(head)
    if magic[3:] != VERSION:
        raise VersionMismatchError(f"unsupported format version {magic[3:]!r}")
    if flags & ~(FLAG_SCORES | FLAG_FULL_PRECISION):
        raise WireFormatError(f"unknown flag bits {flags:#x}")
    values = (ts, x, y, z, yaw)
    if not all(np.isfinite(values)) or ts < 0:
        raise WireFormatError("non-finite or negative header values")
    dt = _payload_dtype(flags)
    f32 = np.dtype("<f4")
    clusters = []
    for _ in range(n_clusters):
        n_points, cx, cy, cz = _CLUSTER_HEAD.unpack(r.take(_CLUSTER_HEAD.size))
        if n_points < 1:
            raise WireFormatError("cluster with no points")
        center = np.array([cx, cy, cz], dtype=float)
        feature = r.array(dt, feat_dim).astype(float)
        with np.errstate(invalid="ignore"):
            box_arr = r.array(f32, 8).astype(float)
        offsets = r.array(dt, 3 * n_points).astype(float).reshape(n_points, 3)
        scores = r.array(dt, n_points).astype(float) if flags & FLAG_SCORES else None
        if not (np.all(np.isfinite(center)) and np.all(np.isfinite(offsets))):
            raise WireFormatError("non-finite cluster position")
        if np.any(np.isnan(box_arr)) and not np.all(np.isnan(box_arr)):
            raise WireFormatError("partially missing proposal box")
        try:
            proposal = None if np.all(np.isnan(box_arr)) else OrientedBox.from_array(box_arr)
            clusters.append(
                PointCluster(points=center + offsets, center=center, feature=feature,
                             proposal=proposal, semantic_scores=scores, source=agent_id)
            )
        except ValueError as exc:
            raise WireFormatError(f"invalid cluster contents: {exc}") from exc
    if r.pos != len(r.buf):
        raise TrailingBytesError(f"{len(r.buf) - r.pos} unexpected trailing bytes")
    return AgentMessage(tuple(clusters), Pose(x, y, z, yaw), agent_id, ts)


def quantize(message: AgentMessage, include_scores: bool = False,
             half_precision: bool = True) -> AgentMessage:
    """The message exactly as a receiver decodes it."""
    return deserialize(serialize(message, include_scores, half_precision))
