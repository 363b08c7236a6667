"""Scenario configuration.

A scenario file is INI-style: one section per sub-config, ``key = value``
lines inside. Nested sub-configs use dotted section names, e.g.
``[packing.proposal_noise]``. Every key is optional and falls back to the
defaults below. Any leaf can also be addressed by a dotted path such as
``channel.latency_s``, which is how sweeps and ``--set`` overrides work.

Sections and keys
-----------------
[scene]      layout, extent, n_objects, speed_min, speed_max, object_size (h,w,l),
             size_jitter, vertical_channels, min_gap, agent_clearance,
             max_placement_tries
[agents]     count, placement_radius, sensor_range, angular_resolution_deg
[oracle]     center_sigma, score_flip_rate, bg_clutter_rate
[clustering] epsilon_point, fg_threshold, min_cluster_points
[encoder]    feature_dim, layers, weight_seed
[packing]    zeta, lambda_s, lambda_d, kde_bandwidth, half_precision, include_scores
[packing.proposal_noise]  center_sigma, size_sigma, yaw_sigma
[channel]    latency_s, pos_noise_sigma, heading_noise_sigma (rad),
             bandwidth_cap_log2 (``none`` = unlimited, ``0`` = no collaboration),
             all_to_all
[robustness] pose_correction, latency_compensation, epsilon_agg, epsilon_pose,
             epsilon_latency_lo, epsilon_latency_hi, compensate_before_pose
[eval]       iou_thresholds, spo_max_points, spe_ratio
[run]        frames, dt, warmup_frames, seed, collaboration
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, is_dataclass, replace
from typing import Any

import numpy as np

from .encoder import ClusteringParams
from .evaluation import EvalConfig
from .netsim import ChannelConfig
from .packing import PackingParams
from .scene import AgentsConfig, OracleNoise, SceneConfig


class ConfigError(ValueError):
    """Invalid configuration; the message starts with the offending path."""


@dataclass(frozen=True)
class EncoderConfig:
    feature_dim: int = 128
    layers: int = 6
    weight_seed: int = 0

    def __post_init__(self):
        if self.feature_dim < 1 or self.layers < 1:
            raise ValueError("feature_dim and layers must be >= 1")


@dataclass(frozen=True)
class RobustnessConfig:
    pose_correction: bool = True
    latency_compensation: bool = True
    epsilon_agg: float = 0.6
    epsilon_pose: float = 1.5
    epsilon_latency_lo: float = 0.5
    epsilon_latency_hi: float = 2.0
    compensate_before_pose: bool = False

    def __post_init__(self):
        if self.epsilon_agg <= 0 or self.epsilon_pose <= 0:
            raise ValueError("matching thresholds must be positive")
        if not 0 <= self.epsilon_latency_lo < self.epsilon_latency_hi:
            raise ValueError("need 0 <= epsilon_latency_lo < epsilon_latency_hi")


@dataclass(frozen=True)
class RunConfig:
    frames: int = 8
    dt: float = 0.1
    warmup_frames: int = 6
    seed: int = 0
    collaboration: bool = True

    def __post_init__(self):
        if self.frames < 1:
            raise ValueError("frames must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.warmup_frames < self.frames:
            raise ValueError("warmup_frames must lie in [0, frames)")


@dataclass(frozen=True)
class ScenarioConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    agents: AgentsConfig = field(default_factory=AgentsConfig)
    oracle: OracleNoise = field(default_factory=OracleNoise)
    clustering: ClusteringParams = field(default_factory=ClusteringParams)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    packing: PackingParams = field(default_factory=PackingParams)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    robustness: RobustnessConfig = field(default_factory=RobustnessConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    run: RunConfig = field(default_factory=RunConfig)

    @property
    def collaborates(self) -> bool:
        cap = self.channel.bandwidth_cap_log2
        return self.run.collaboration and not (cap is not None and cap <= 0)


def derive_seed(master: int, *keys) -> int:
    """Counter-based sub-seed: ``SeedSequence(master, spawn_key=keys)``.

    String keys are hashed to stable integers first, so the mapping never
    depends on Python's per-process string hashing.
    """
    ints = tuple(_key_int(k) for k in keys)
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=ints)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def _key_int(k) -> int:
    if isinstance(k, (int, np.integer)):
        return int(k) & 0xFFFFFFFF
    return int.from_bytes(str(k).encode("utf-8")[:8].ljust(8, b"\0"), "little") ^ len(str(k))


# --- coercion ---------------------------------------------------------------

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(path: str, default: Any, raw: Any):
    if not isinstance(raw, str):
        if isinstance(default, bool):
            return bool(raw)
        if isinstance(default, tuple) and not isinstance(raw, tuple):
            raise ConfigError(f"{path}: expected a comma-separated list")
        return raw
    text = raw.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in _TRUE:
                return True
            if low in _FALSE:
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if default is None:
            return None if text.lower() in ("", "none", "inf") else float(text)
        if isinstance(default, tuple):
            return tuple(float(v) for v in text.split(",") if v.strip())
        if isinstance(default, str):
            return text
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    raise ConfigError(f"{path}: unsupported value type")


def _apply(obj, tree: dict, prefix: str):
    """Replace all leaves in ``tree`` at once, one ``replace`` per sub-config.

    Batching matters for cross-field checks inside a sub-config (e.g.
    ``run.frames`` and ``run.warmup_frames``), which must see both new values.
    """
    names = {f.name for f in fields(obj)} if is_dataclass(obj) else set()
    changes = {}
    for name, sub in tree.items():
        path = f"{prefix}.{name}" if prefix else name
        if name not in names:
            raise ConfigError(f"{path}: unknown setting")
        current = getattr(obj, name)
        if isinstance(sub, dict):
            if not is_dataclass(current):
                raise ConfigError(f"{path}: unknown setting")
            changes[name] = _apply(current, sub, path)
        else:
            if is_dataclass(current):
                raise ConfigError(f"{path}: is a section, not a value")
            changes[name] = _coerce(path, current, sub[0])
    try:
        return replace(obj, **changes)
    except (ValueError, TypeError) as exc:
        where = prefix or next(iter(tree))
        raise ConfigError(f"{where}: {exc}") from None


def with_values(config: ScenarioConfig, items) -> ScenarioConfig:
    """Apply several ``(dotted_path, value)`` overrides together."""
    tree: dict = {}
    for path, value in items:
        parts = path.split(".")
        node = tree
        for p in parts[:-1]:
            nxt = node.setdefault(p, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"{path}: conflicting settings")
            node = nxt
        if isinstance(node.get(parts[-1]), dict):
            raise ConfigError(f"{path}: is a section, not a value")
        node[parts[-1]] = (value,)  # wrapped so a later dict check can't confuse it
    return _apply(config, tree, "") if tree else config


def with_value(config: ScenarioConfig, path: str, value) -> ScenarioConfig:
    """Return a copy with the dotted ``path`` set to ``value`` (string or typed)."""
    return with_values(config, [(path, value)])


def get_value(config: ScenarioConfig, path: str):
    obj = config
    for p in path.split("."):
        if not is_dataclass(obj) or not hasattr(obj, p):
            raise ConfigError(f"{path}: unknown setting")
        obj = getattr(obj, p)
    return obj


def parse_config(text: str) -> ScenarioConfig:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"<file>: {exc}") from None
    items = [(f"{section}.{key}", raw)
             for section in parser.sections() for key, raw in parser.items(section)]
    cfg = with_values(ScenarioConfig(), items)
    validate(cfg)
    return cfg


def load_config(path) -> ScenarioConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None


def validate(cfg: ScenarioConfig) -> None:
    """Cross-field checks beyond what each sub-config validates itself."""
    if cfg.scene.n_objects < 1:
        raise ConfigError("scene.n_objects: need at least one object")
    if cfg.agents.count < 2:
        raise ConfigError("agents.count: need at least two agents")
    if cfg.scene.layout not in ("random", "occlusion"):
        raise ConfigError(f"scene.layout: unknown layout {cfg.scene.layout!r}")
    if cfg.scene.layout == "occlusion":
        if cfg.agents.count != 2:
            raise ConfigError("agents.count: occlusion layout uses exactly two agents")
        if cfg.scene.n_objects % 2:
            raise ConfigError("scene.n_objects: occlusion layout needs an even count")
    if cfg.scene.speed_min > cfg.scene.speed_max:
        raise ConfigError("scene.speed_min: exceeds scene.speed_max")
    if len(cfg.scene.object_size) != 3 or min(cfg.scene.object_size) <= 0:
        raise ConfigError("scene.object_size: need three positive values (h, w, l)")
    if cfg.scene.vertical_channels < 1:
        raise ConfigError("scene.vertical_channels: must be >= 1")
    if cfg.agents.sensor_range <= 0 or cfg.agents.angular_resolution_deg <= 0:
        raise ConfigError("agents.sensor_range: sensor parameters must be positive")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "none"
    if isinstance(v, tuple):
        return ", ".join(repr(float(x)) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _emit(obj, section: str, out: dict):
    for f in fields(obj):
        v = getattr(obj, f.name)
        if is_dataclass(v):
            _emit(v, f"{section}.{f.name}", out)
        else:
            out.setdefault(section, []).append((f.name, _fmt(v)))


def dump_config(cfg: ScenarioConfig) -> str:
    """Render the fully resolved config in the same INI format it is read from."""
    sections: dict = {}
    for f in fields(cfg):
        _emit(getattr(cfg, f.name), f.name, sections)
    buf = io.StringIO()
    for name, items in sections.items():
        buf.write(f"[{name}]\n")
        for k, v in items:
            buf.write(f"{k} = {v}\n")
        buf.write("\n")
    return buf.getvalue()
