"""Figures written next to the CSV outputs.

Uses the non-interactive Agg backend; nothing here is needed by the
simulation itself, so the library works without ever importing it.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "savefig.dpi": 150,
}

AP_SERIES = ("AP@0.5", "AP@0.7", "AP_SP-O", "AP_CP", "AP_SP-E")


def _closed(corners):
    return np.vstack([corners, corners[:1]])


def plot_sweep(rows, path):
    """AP metrics (with std bars) and comm volume against the swept value."""
    values = [r.value for r in rows]
    try:
        x = np.array(values, dtype=float)
    except (TypeError, ValueError):
        x = np.arange(len(values))
    logx = len(x) > 1 and np.all(x > 0) and x.max() / x.min() > 20
    with plt.rc_context(_STYLE):
        fig, (ax_ap, ax_comm) = plt.subplots(1, 2, figsize=(8, 3.2))
        if logx:
            ax_ap.set_xscale("log", base=2)
            ax_comm.set_xscale("log", base=2)
        for m in AP_SERIES:
            mean = np.array([np.nan if r.mean[m] is None else r.mean[m] for r in rows])
            if np.all(np.isnan(mean)):
                continue
            std = np.array([0.0 if r.std[m] is None else r.std[m] for r in rows])
            ax_ap.errorbar(x, mean, yerr=std, marker="o", ms=3, capsize=2, label=m)
        ax_ap.set_xlabel(rows[0].parameter if rows else "")
        ax_ap.set_ylabel("AP")
        ax_ap.set_ylim(-0.02, 1.02)
        ax_ap.legend(frameon=False, fontsize=7)

        comm = np.array([np.nan if r.mean["comm_log2"] is None else r.mean["comm_log2"]
                         for r in rows])
        ax_comm.plot(x, comm, marker="s", ms=3, color="k")
        ax_comm.set_xlabel(rows[0].parameter if rows else "")
        ax_comm.set_ylabel("log2 bytes per message")
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)


def plot_bev(result, path, frame=-1):
    """Top-down view of one evaluated frame in the ego frame.

    Ground truth in grey (dashed where the ego saw no points), detections
    in color by the agent that contributed the winning box.
    """
    if not result.frames:
        return
    rec = result.frames[frame]
    with plt.rc_context(_STYLE):
        fig, ax = plt.subplots(figsize=(5, 5))
        for gt in rec.evaluation.ground_truth:
            xy = _closed(gt.box.corners_2d())
            ax.plot(xy[:, 0], xy[:, 1], color="0.5", lw=1,
                    ls="--" if gt.ego_point_count == 0 else "-")
        cmap = plt.get_cmap("tab10")
        for det in rec.detections:
            xy = _closed(det.proposal.corners_2d())
            src = det.source if det.source is not None else 0
            ax.plot(xy[:, 0], xy[:, 1], color=cmap(src % 10), lw=1.2)
            ax.scatter(det.points[:, 0], det.points[:, 1], s=0.5, color=cmap(src % 10))
        scene = result.scene
        if scene is not None:
            ego = scene.ego.pose
            for agent in scene.agents:
                rel = ego.inverse().compose(agent.pose)
                ax.plot(rel.x, rel.y, marker="^" if agent.is_ego else "o",
                        color=cmap(agent.agent_id % 10), ms=7)
        ax.set_aspect("equal")
        ax.set_xlabel("x [m]")
        ax.set_ylabel("y [m]")
        ax.set_title(f"frame {rec.index}", fontsize=9)
        fig.tight_layout()
        fig.savefig(path)
        plt.close(fig)
