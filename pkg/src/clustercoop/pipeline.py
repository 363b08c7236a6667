"""End-to-end collaborative perception runs and parameter sweeps."""
from __future__ import annotations

import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .aggregation import AggregationParams, aggregate
from .config import ScenarioConfig, derive_seed, get_value, validate, with_value
from .encoder import SirWeights, encode_clusters
from .evaluation import (
    CATEGORIES, FrameEval, GroundTruth, compute_ap, compute_category_ap,
)
from .geometry import AgentMessage
from .netsim import Channel, enforce_bandwidth, exchange
from .packing import comm_volume, generate_proposals, override_points, pack_message
from .robustness import LatencyParams, compensate_latency, correct_poses
from .scene import Scene, generate_scene, observe, step_scene
from .spatial import OpCounter

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("AP@0.5", "AP@0.7", "AP_SP-O", "AP_CP", "AP_SP-E", "comm_log2")


@dataclass
class FrameRecord:
    index: int
    time: float
    evaluation: FrameEval
    detections: list
    comm_log2: list = field(default_factory=list)


@dataclass
class RunResult:
    metrics: dict
    frames: list
    warnings: list = field(default_factory=list)
    telemetry: OpCounter = field(default_factory=OpCounter)
    scene: Optional[Scene] = None

    def detection_rows(self) -> list[tuple]:
        rows = []
        for fr in self.frames:
            for c in fr.detections:
                b = c.proposal
                rows.append((fr.index, c.source, *b.center.tolist(), *b.size, b.yaw, b.confidence))
        return rows


def _agent_clusters(scene, agent, cfg: ScenarioConfig, weights, seed, frame, counter):
    cloud = observe(scene, agent, cfg.oracle, derive_seed(seed, "observe", frame, agent.agent_id))
    clusters = encode_clusters(cloud, cfg.clustering, weights, counter)
    truth = scene.boxes_in_frame(agent.pose)
    clusters = generate_proposals(
        clusters, truth, cfg.packing.proposal_noise,
        derive_seed(seed, "proposal", frame, agent.agent_id),
    )
    clusters = [override_points(c, cloud, cfg.clustering.fg_threshold) for c in clusters]
    return cloud, clusters


def run(cfg: ScenarioConfig, seed: Optional[int] = None) -> RunResult:
    """Simulate ``cfg.run.frames`` frames and evaluate the ego's detections.

    Per frame: step the scene, observe and encode per agent, pack under the
    bandwidth cap, exchange over the channel, correct poses, compensate
    latency, aggregate, evaluate. With ``robustness.compensate_before_pose``
    the two corrections swap, so the pose graph sees motion-compensated
    centers instead of stale ones.
    """
    seed = cfg.run.seed if seed is None else seed
    scene = generate_scene(cfg, derive_seed(seed, "scene"))
    weights = SirWeights.seeded(cfg.encoder.feature_dim, cfg.encoder.layers,
                                cfg.encoder.weight_seed)
    channel = Channel(cfg.channel, include_scores=cfg.packing.include_scores,
                      half_precision=cfg.packing.half_precision)
    latency = LatencyParams(cfg.robustness.epsilon_latency_lo, cfg.robustness.epsilon_latency_hi)
    agg = AggregationParams(cfg.robustness.epsilon_agg)
    ego = scene.ego
    agent_ids = [a.agent_id for a in scene.agents]
    counter = OpCounter()        # aggregation ops only
    enc_counter = OpCounter()
    result = RunResult({}, [], scene=scene)

    for k in range(cfg.run.frames):
        if k > 0:
            scene = step_scene(scene, cfg.run.dt)
        now = k * cfg.run.dt
        clouds, messages, comms = {}, [], []
        ego_msg = None
        for agent in scene.agents:
            cloud, clusters = _agent_clusters(scene, agent, cfg, weights, seed, k, enc_counter)
            clouds[agent.agent_id] = cloud
            if agent.is_ego:
                ego_msg = AgentMessage(tuple(clusters), agent.pose, agent.agent_id, now)
                continue
            if not cfg.collaborates:
                continue
            decision = enforce_bandwidth(clusters, cfg.packing, cfg.channel.bandwidth_cap_log2)
            if not decision.feasible:
                result.warnings.append(f"frame {k}: bandwidth cap infeasible for agent "
                                       f"{agent.agent_id}")
            msg = pack_message(clusters, decision.params, agent.pose, agent.agent_id, now)
            comms.append(comm_volume(msg, cfg.packing.include_scores).comm_log2)
            messages.append(msg)

        received = []
        if cfg.collaborates:
            exchange(channel, messages, ego.agent_id, now, derive_seed(seed, "channel", k),
                     agent_ids)
            for sender in agent_ids:
                if sender == ego.agent_id:
                    continue
                latest = channel.latest(ego.agent_id, sender)
                if latest is not None:
                    received.append(latest)
            rob = cfg.robustness

            def compensate(msgs):
                # sender-local matching, so it commutes with the pose swap itself
                return [compensate_latency(channel.previous(ego.agent_id, m.agent_id), m, now,
                                           latency) for m in msgs]

            if rob.latency_compensation and rob.compensate_before_pose:
                received = compensate(received)
            if received and rob.pose_correction:
                received, corr = correct_poses(ego_msg, received, rob.epsilon_pose)
                if corr is not None and corr.degenerate:
                    result.warnings.append(f"frame {k}: pose graph degenerate")
            if rob.latency_compensation and not rob.compensate_before_pose:
                received = compensate(received)

        detections = aggregate(ego_msg, received, agg, counter)
        detections = [d for d in detections if d.proposal is not None]

        if k >= cfg.run.warmup_frames:
            ego_counts = clouds[ego.agent_id].foreground_counts()
            other_counts: dict = {}
            for aid, cloud in clouds.items():
                if aid == ego.agent_id:
                    continue
                for oid, n in cloud.foreground_counts().items():
                    other_counts[oid] = other_counts.get(oid, 0) + n
            gts = [
                GroundTruth(box, ego_counts.get(o.object_id, 0), other_counts.get(o.object_id, 0))
                for o, box in zip(scene.objects, scene.boxes_in_frame(ego.pose))
            ]
            fe = FrameEval([d.proposal for d in detections], gts)
            result.frames.append(FrameRecord(k, now, fe, detections, comms))

    result.telemetry = counter
    result.scene = scene
    result.metrics = summarize(result.frames, cfg)
    return result


def summarize(frames: Sequence[FrameRecord], cfg: ScenarioConfig) -> dict:
    evals = [f.evaluation for f in frames]
    metrics = {}
    for t in cfg.eval.iou_thresholds:
        metrics[f"AP@{t:g}"] = compute_ap(evals, t)
    cat_thr = max(cfg.eval.iou_thresholds)
    for cat, ap in compute_category_ap(evals, cat_thr, cfg.eval).items():
        metrics[f"AP_{cat}"] = ap
    comms = [c for f in frames for c in f.comm_log2]
    metrics["comm_log2"] = float(np.mean(comms)) if comms else None
    return metrics


# --- reporting -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        if math.isnan(v):
            return ""
        return f"{v:.6f}"
    return str(v)


def metrics_csv(rows: Sequence[tuple], with_std: bool = False) -> str:
    """Metric table: parameter, value, then one column per metric (and its std)."""
    head = ["parameter", "value"]
    if with_std:
        head.append("reps")
        for m in METRIC_COLUMNS:
            head += [m, f"{m}_std"]
    else:
        head += list(METRIC_COLUMNS)
    buf = io.StringIO()
    buf.write(",".join(head) + "\n")
    for row in rows:
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def run_row(parameter: str, value, metrics: dict) -> tuple:
    return (parameter, value, *(metrics.get(m) for m in METRIC_COLUMNS))


def detections_csv(result: RunResult) -> str:
    buf = io.StringIO()
    buf.write("frame,agent,x,y,z,h,w,l,yaw,confidence\n")
    for row in result.detection_rows():
        buf.write(",".join(_fmt(v) if isinstance(v, float) else str(v) for v in row) + "\n")
    return buf.getvalue()


@dataclass
class SweepRow:
    parameter: str
    value: object
    reps: int
    mean: dict
    std: dict

    def as_tuple(self) -> tuple:
        out = [self.parameter, self.value, self.reps]
        for m in METRIC_COLUMNS:
            out += [self.mean.get(m), self.std.get(m)]
        return tuple(out)


def rep_seed(master: int, rep: int) -> int:
    """Repetition 0 uses the master seed itself so a 1-rep sweep equals ``run``."""
    return master if rep == 0 else derive_seed(master, "rep", rep)


def _run_metrics(args):
    cfg, seed = args
    return run(cfg, seed).metrics


def sweep(cfg: ScenarioConfig, path: str, values: Sequence, reps: int = 1,
          seed: Optional[int] = None, jobs: int = 1) -> list[SweepRow]:
    """One run per (value, repetition); repetitions share seeds across values."""
    get_value(cfg, path)  # fail fast on unknown paths
    seed = cfg.run.seed if seed is None else seed
    configs = [with_value(cfg, path, v) for v in values]
    for c in configs:
        validate(c)
    tasks = [(c, rep_seed(seed, r)) for c in configs for r in range(reps)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_metrics, tasks))
    else:
        results = [_run_metrics(t) for t in tasks]
    rows = []
    for i, v in enumerate(values):
        chunk = results[i * reps:(i + 1) * reps]
        mean, std = {}, {}
        for m in METRIC_COLUMNS:
            vals = [r[m] for r in chunk if r.get(m) is not None]
            mean[m] = float(np.mean(vals)) if vals else None
            std[m] = float(np.std(vals)) if vals else None
        rows.append(SweepRow(path, get_value(configs[i], path), reps, mean, std))
    return rows
