"""Multi-agent collaborative perception built around point clusters.

Agents turn their LiDAR sweep into per-object point clusters, pack them
under a bandwidth budget, exchange them over a lossy channel, and the ego
fuses what it receives after correcting pose errors and latency.
"""
from .config import ScenarioConfig, load_config, parse_config
from .geometry import AgentMessage, OrientedBox, PointCluster, Pose
from .pipeline import run, sweep

__version__ = "0.1.0"

__all__ = [
    "AgentMessage",
    "OrientedBox",
    "PointCluster",
    "Pose",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "run",
    "sweep",
    "__version__",
]
