"""Simulated V2X channel: latency, pose corruption and bandwidth control."""
from __future__ import annotations

import heapq
import logging
import math
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import AgentMessage, PointCluster, Pose
from .packing import PackingParams, packed_comm
from .wire import deserialize, serialize

log = logging.getLogger(__name__)

ZETA_GRID = (1.0, 1 / 4, 1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128)
CLOCK_EPS = 1e-9


@dataclass(frozen=True)
class ChannelConfig:
    latency_s: float = 0.0
    pos_noise_sigma: float = 0.0
    heading_noise_sigma: float = 0.0  # radians
    bandwidth_cap_log2: Optional[float] = None
    all_to_all: bool = False

    def __post_init__(self):
        if min(self.latency_s, self.pos_noise_sigma, self.heading_noise_sigma) < 0:
            raise ValueError("latency and noise sigmas must be >= 0")


@dataclass(frozen=True)
class InFlightMessage:
    payload: bytes
    send_time: float
    deliver_time: float
    sender: int
    receiver: int


def corrupt_pose(pose: Pose, cfg: ChannelConfig, seed) -> Pose:
    """Add independent Gaussian noise to x, y and yaw."""
    rng = np.random.default_rng(seed)
    dx, dy, dyaw = rng.normal(size=3)
    return Pose(
        pose.x + cfg.pos_noise_sigma * dx,
        pose.y + cfg.pos_noise_sigma * dy,
        pose.z,
        pose.yaw + cfg.heading_noise_sigma * dyaw,
    )


@dataclass(frozen=True)
class BandwidthDecision:
    params: PackingParams
    feasible: bool
    comm_log2: float


def enforce_bandwidth(
    clusters: Sequence[PointCluster], params: PackingParams, cap_log2: Optional[float]
) -> BandwidthDecision:
    """Largest grid sampling rate whose packed volume fits under ``cap_log2``.

    If nothing on the grid fits, the coarsest rate is used and the decision
    is marked infeasible.
    """
    if cap_log2 is None:
        cap_log2 = math.inf
    grid = [z for z in ZETA_GRID if z <= params.zeta] or [ZETA_GRID[-1]]
    for zeta in grid:
        comm = packed_comm(clusters, zeta, params.include_scores).comm_log2
        if comm <= cap_log2:
            return BandwidthDecision(replace(params, zeta=zeta), True, comm)
    zeta = ZETA_GRID[-1]
    comm = packed_comm(clusters, zeta, params.include_scores).comm_log2
    log.warning("bandwidth cap %.3f infeasible; sending at zeta=1/128 (%.3f)", cap_log2, comm)
    return BandwidthDecision(replace(params, zeta=zeta), False, comm)


@dataclass
class Delivery:
    sender: int
    receiver: int
    payload: bytes
    message: AgentMessage
    send_time: float
    deliver_time: float


class Channel:
    """Single-owner event queue advanced by the simulation loop.

    ``links`` overrides the default :class:`ChannelConfig` per
    ``(sender, receiver)`` pair. Each receiver keeps the last two deliveries
    per sender so the previous round is available for latency compensation.
    """

    def __init__(self, default: ChannelConfig = ChannelConfig(), links: dict | None = None,
                 include_scores: bool = False, half_precision: bool = True):
        self.default = default
        self.links = dict(links or {})
        self.include_scores = include_scores
        self.half_precision = half_precision
        self._queue: list = []
        self._seq = 0
        self.history: dict = defaultdict(lambda: deque(maxlen=2))
        self.sent_bytes: list[int] = []

    def link(self, sender: int, receiver: int) -> ChannelConfig:
        return self.links.get((sender, receiver), self.default)

    def send(self, message: AgentMessage, receivers: Iterable[int], now: float, seed) -> None:
        """Corrupt the sender pose, serialize once per link and enqueue."""
        for k, rx in enumerate(receivers):
            cfg = self.link(message.agent_id, rx)
            noisy = message.replace(pose=corrupt_pose(message.pose, cfg, (*_seed_tuple(seed), k)))
            payload = serialize(noisy, self.include_scores, self.half_precision)
            self.sent_bytes.append(len(payload))
            item = InFlightMessage(payload, now, now + cfg.latency_s, message.agent_id, rx)
            heapq.heappush(self._queue, (item.deliver_time, self._seq, item))
            self._seq += 1

    def deliver(self, clock: float) -> dict[int, list[Delivery]]:
        """Pop everything due by ``clock``, grouped by receiver in delivery order."""
        out: dict[int, list[Delivery]] = defaultdict(list)
        while self._queue and self._queue[0][0] <= clock + CLOCK_EPS:
            _, _, item = heapq.heappop(self._queue)
            d = Delivery(item.sender, item.receiver, item.payload,
                         deserialize(item.payload), item.send_time, item.deliver_time)
            self.history[(item.receiver, item.sender)].append(d.message)
            out[item.receiver].append(d)
        return dict(out)

    def latest(self, receiver: int, sender: int) -> Optional[AgentMessage]:
        h = self.history.get((receiver, sender))
        return h[-1] if h else None

    def previous(self, receiver: int, sender: int) -> Optional[AgentMessage]:
        h = self.history.get((receiver, sender))
        return h[-2] if h and len(h) == 2 else None

    def pending(self) -> int:
        return len(self._queue)


def _seed_tuple(seed) -> tuple:
    return tuple(seed) if isinstance(seed, (tuple, list)) else (seed,)


def exchange(channel: Channel, messages: Sequence[AgentMessage], ego_id: int, clock: float,
             seed, all_agents: Sequence[int] | None = None) -> dict[int, list[Delivery]]:
    """Send every non-ego message (to the ego, or to everyone when all-to-all) and deliver.

    Returns the deliveries due at ``clock`` keyed by receiver.
    """
    all_agents = list(all_agents) if all_agents is not None else [m.agent_id for m in messages]
    for m in messages:
        if channel.default.all_to_all:
            receivers = [a for a in all_agents if a != m.agent_id]
        elif m.agent_id != ego_id:
            receivers = [ego_id]
        else:
            continue
        channel.send(m, receivers, clock, (*_seed_tuple(seed), m.agent_id))
    return channel.deliver(clock)
