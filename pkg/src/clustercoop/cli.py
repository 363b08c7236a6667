"""Command-line entry point.

    clustercoop run            --config scn.ini --out out/
    clustercoop sweep          --config scn.ini --sweep channel.latency_s=0,0.1,0.2 --reps 3
    clustercoop validate-config --config scn.ini
    clustercoop dump-scene     --config scn.ini --out scene/

Exit codes: 0 success, 2 configuration error, 3 degeneracy warnings under --strict.
"""
from __future__ import annotations

import argparse
import logging
import sys
from fractions import Fraction
from pathlib import Path

from . import __version__
from .config import (
    ConfigError, ScenarioConfig, derive_seed, dump_config, load_config, validate,
    with_value, with_values,
)
from .pipeline import detections_csv, metrics_csv, run, run_row, sweep
from .scene import generate_scene, observe, scene_to_csv

log = logging.getLogger("clustercoop")

EXIT_OK, EXIT_CONFIG, EXIT_STRICT = 0, 2, 3


def _parse_sweep(text: str):
    if "=" not in text:
        raise ConfigError(f"--sweep: expected PATH=v1,v2,..., got {text!r}")
    path, raw = text.split("=", 1)
    values = []
    for v in raw.split(","):
        v = v.strip()
        if not v:
            continue
        if "/" in v:
            try:
                v = float(Fraction(v))
            except (ValueError, ZeroDivisionError):
                raise ConfigError(f"{path}: bad value {v!r}") from None
        values.append(v)
    if not values:
        raise ConfigError(f"{path}: empty value list")
    return path.strip(), values


def _load(args) -> ScenarioConfig:
    cfg = load_config(args.config) if args.config else ScenarioConfig()
    items = []
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set: expected PATH=VALUE, got {item!r}")
        path, value = item.split("=", 1)
        items.append((path.strip(), value))
    cfg = with_values(cfg, items)
    validate(cfg)
    return cfg


def _manifest(cfg, args, seed) -> str:
    head = [
        f"# clustercoop {__version__}",
        f"# command: {args.command}",
        f"# seed: {seed}",
    ]
    if getattr(args, "sweep", None):
        head.append(f"# sweep: {args.sweep} reps={args.reps}")
    return "\n".join(head) + "\n\n" + dump_config(cfg)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_run(args) -> int:
    cfg = _load(args)
    seed = cfg.run.seed if args.seed is None else args.seed
    result = run(cfg, seed)
    out = _out_dir(args)
    (out / "metrics.csv").write_text(metrics_csv([run_row("run", seed, result.metrics)]))
    (out / "detections.csv").write_text(detections_csv(result))
    (out / "manifest.txt").write_text(_manifest(cfg, args, seed))
    if not args.no_plot:
        from .plotting import plot_bev
        plot_bev(result, out / "bev.png")
    for w in result.warnings:
        log.warning(w)
    print(metrics_csv([run_row("run", seed, result.metrics)]), end="")
    return EXIT_STRICT if args.strict and result.warnings else EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    if not args.sweep:
        raise ConfigError("--sweep: required for the sweep command")
    path, values = _parse_sweep(args.sweep)
    for v in values:
        validate(with_value(cfg, path, v))  # check every value before running anything
    seed = cfg.run.seed if args.seed is None else args.seed
    rows = sweep(cfg, path, values, reps=args.reps, seed=seed, jobs=args.jobs)
    out = _out_dir(args)
    text = metrics_csv([r.as_tuple() for r in rows], with_std=True)
    (out / "sweep.csv").write_text(text)
    (out / "manifest.txt").write_text(_manifest(cfg, args, seed))
    if not args.no_plot:
        from .plotting import plot_sweep
        plot_sweep(rows, out / "sweep.png")
    print(text, end="")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _load(args)
    print(dump_config(cfg), end="")
    return EXIT_OK


def cmd_dump_scene(args) -> int:
    cfg = _load(args)
    seed = cfg.run.seed if args.seed is None else args.seed
    scene = generate_scene(cfg, derive_seed(seed, "scene"))
    out = _out_dir(args)
    (out / "scene.csv").write_text(scene_to_csv(scene))
    for agent in scene.agents:
        cloud = observe(scene, agent, cfg.oracle, derive_seed(seed, "observe", 0, agent.agent_id))
        (out / f"agent{agent.agent_id}_points.csv").write_text(cloud.to_csv())
    (out / "manifest.txt").write_text(_manifest(cfg, args, seed))
    print(f"wrote {len(scene.objects)} objects and {len(scene.agents)} point clouds to {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario INI file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("--set", action="append", metavar="PATH=VALUE",
                        help="override one setting, e.g. --set channel.latency_s=0.2")
    common.add_argument("--strict", action="store_true",
                        help="exit 3 if the run reports degeneracy warnings")
    common.add_argument("--no-plot", action="store_true", help="skip writing PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="clustercoop", description=__doc__.splitlines()[0] or None)
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("run", parents=[common], help="simulate and evaluate one scenario")
    sp = sub.add_parser("sweep", parents=[common], help="vary one setting over a list of values")
    sp.add_argument("--sweep", metavar="PATH=v1,v2,...")
    sp.add_argument("--reps", type=int, default=1, help="repetitions per value")
    sp.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_parser("validate-config", parents=[common], help="check a config and print it resolved")
    sub.add_parser("dump-scene", parents=[common], help="write the initial scene and point clouds")
    return p


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "validate-config": cmd_validate,
    "dump-scene": cmd_dump_scene,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if getattr(args, "reps", 1) < 1:
        print("error: --reps must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
