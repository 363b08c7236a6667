"""Detection metrics: rotated 3D IoU, all-point AP, and visibility-category AP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import OrientedBox

SP_O, CP, SP_E = "SP-O", "CP", "SP-E"
CATEGORIES = (SP_O, CP, SP_E)


@dataclass(frozen=True)
class EvalConfig:
    iou_thresholds: tuple = (0.5, 0.7)
    spo_max_points: int = 5
    spe_ratio: float = 0.8

    def __post_init__(self):
        if not all(0.0 < t < 1.0 for t in self.iou_thresholds):
            raise ValueError("IoU thresholds must lie in (0, 1)")
        if self.spo_max_points < 0:
            raise ValueError("spo_max_points must be >= 0")
        if not 0.0 < self.spe_ratio < 1.0:
            raise ValueError("spe_ratio must lie in (0, 1)")


@dataclass(frozen=True)
class GroundTruth:
    box: OrientedBox
    ego_point_count: int = 0
    other_point_count: int = 0


@dataclass
class FrameEval:
    detections: list = field(default_factory=list)
    ground_truth: list = field(default_factory=list)


def polygon_area(poly: np.ndarray) -> float:
    if len(poly) < 3:
        return 0.0
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def clip_convex(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman clipping of ``subject`` by the counter-clockwise convex ``clip``."""
    out = list(map(tuple, subject))
    n = len(clip)
    for k in range(n):
        if not out:
            break
        a, b = clip[k], clip[(k + 1) % n]
        ex, ey = b[0] - a[0], b[1] - a[1]

        def side(p):
            return ex * (p[1] - a[1]) - ey * (p[0] - a[0])

        inp, out = out, []
        for i, cur in enumerate(inp):
            prev = inp[i - 1]
            sc, sp = side(cur), side(prev)
            if sc >= 0:
                if sp < 0:
                    t = sp / (sp - sc)
                    out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
                out.append(cur)
            elif sp >= 0:
                t = sp / (sp - sc)
                out.append((prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])))
    return np.array(out, dtype=float).reshape(-1, 2)


def box_iou(a: OrientedBox, b: OrientedBox) -> float:
    """Volumetric IoU of two yaw-rotated boxes."""
    area = polygon_area(clip_convex(a.corners_2d(), b.corners_2d()))
    if area <= 0.0:
        return 0.0
    top = min(a.center[2] + a.h / 2, b.center[2] + b.h / 2)
    bottom = max(a.center[2] - a.h / 2, b.center[2] - b.h / 2)
    inter = area * max(0.0, top - bottom)
    union = a.l * a.w * a.h + b.l * b.w * b.h - inter
    return float(min(1.0, max(0.0, inter / union)))


def categorize(gt: GroundTruth, cfg: EvalConfig = EvalConfig()) -> str:
    ego, other = gt.ego_point_count, gt.other_point_count
    if ego <= cfg.spo_max_points:
        return SP_O
    if ego / (ego + other) >= cfg.spe_ratio:
        return SP_E
    return CP


def categorize_targets(frame: FrameEval, cfg: EvalConfig = EvalConfig()) -> list[str]:
    return [categorize(g, cfg) for g in frame.ground_truth]


def match_detections(frames: Sequence[FrameEval], iou_threshold: float):
    """Greedy confidence-ordered matching pooled over frames.

    Returns ``(confidence, frame_index, gt_index)`` per detection in ranking
    order, with ``gt_index = None`` for false positives.
    """
    order = []
    for f, frame in enumerate(frames):
        for d, det in enumerate(frame.detections):
            order.append((-det.confidence, f, d))
    order.sort()
    taken = [np.zeros(len(fr.ground_truth), dtype=bool) for fr in frames]
    ious = {}
    out = []
    for neg_conf, f, d in order:
        frame = frames[f]
        if f not in ious:
            ious[f] = np.array(
                [[box_iou(det, g.box) for g in frame.ground_truth] for det in frame.detections]
            ).reshape(len(frame.detections), len(frame.ground_truth))
        row = np.where(taken[f], -1.0, ious[f][d]) if len(frame.ground_truth) else np.zeros(0)
        match = None
        if len(row) and row.max() >= iou_threshold:
            match = int(np.argmax(row))
            taken[f][match] = True
        out.append((-neg_conf, f, match))
    return out


def average_precision(tp: Sequence[bool], n_positive: int) -> Optional[float]:
    """Area under the precision envelope of a ranked TP/FP list (all points)."""
    if n_positive == 0:
        return None
    tp = np.asarray(tp, dtype=float)
    if len(tp) == 0:
        return 0.0
    ctp = np.cumsum(tp)
    recall = ctp / n_positive
    precision = ctp / np.arange(1, len(tp) + 1)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    mpre = np.maximum.accumulate(mpre[::-1])[::-1]
    idx = np.flatnonzero(mrec[1:] != mrec[:-1])
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def compute_ap(frames: Sequence[FrameEval], iou_threshold: float) -> Optional[float]:
    """AP over all frames; ``None`` when there is no ground truth at all."""
    n_pos = sum(len(f.ground_truth) for f in frames)
    ranked = match_detections(frames, iou_threshold)
    return average_precision([m is not None for _, _, m in ranked], n_pos)


def compute_category_ap(
    frames: Sequence[FrameEval], iou_threshold: float, cfg: EvalConfig = EvalConfig()
) -> dict:
    """AP per visibility category; absent categories map to ``None``.

    Ground truth outside a category is ignored for that category, and so are
    detections matched to it.
    """
    labels = [categorize_targets(f, cfg) for f in frames]
    ranked = match_detections(frames, iou_threshold)
    out = {}
    for cat in CATEGORIES:
        n_pos = sum(lab.count(cat) for lab in labels)
        tp = []
        for _, f, m in ranked:
            if m is None:
                tp.append(False)
            elif labels[f][m] == cat:
                tp.append(True)
        out[cat] = average_precision(tp, n_pos)
    return out
