"""Command-line entry point: ``graspview <command> [--config PATH] [--seed N] ...``.

Exit codes: 0 success, 2 configuration error, 3 runtime error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from graspview.errors import ConfigError, GraspViewError
from graspview.geometry import ShapeClass, write_obj, write_ply
from graspview.harness.config import ExperimentConfig, load_config
from graspview.harness.pipeline import (
    IDENTITY,
    SequenceOrder,
    build_map,
    corpus_meshes,
    run_offline_eval,
    run_sequence_eval,
)
from graspview.harness.report import (
    emit_report,
    emit_sequence_report,
    provenance,
    write_map_exports,
)
from graspview.simcam import ViewpointSpec, render_cloud, viewpoint_to_pose
from graspview.viewmap import load_map, save_map

log = logging.getLogger("graspview")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
_GLOBAL_DEFAULTS = {"config": None, "seed": None, "out": "out", "jobs": 1, "verbose": False}


def _add_globals(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    p.add_argument("--config", default=s, help="TOML experiment config")
    p.add_argument("--seed", type=int, default=s, help="override master_seed (u64)")
    p.add_argument("--out", default=s, help="output directory (default: out)")
    p.add_argument("--jobs", type=int, default=s, help="worker processes (default: 1)")
    p.add_argument("--verbose", action="store_true", default=s, help="log progress")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="graspview", description=__doc__.splitlines()[0])
    _add_globals(parser)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-corpus", help="write the procedural meshes as OBJ files")
    _add_globals(p)

    p = sub.add_parser("build-map", help="build viewpoint-quality maps")
    _add_globals(p)
    p.add_argument("--shape-class", choices=[c.value for c in ShapeClass] + ["all"],
                   help="default: every class the evaluations need")

    p = sub.add_parser("eval-offline", help="compare selection strategies")
    _add_globals(p)
    p.add_argument("--map", action="append", default=[], help="map file(s); built when omitted")
    p.add_argument("--trials", type=int, help="trials per shape class (default: eval_trials)")
    p.add_argument("--strategies", default="smart,head_on,random")

    p = sub.add_parser("eval-sequence", help="simulate random/smart/alignment view sequences")
    _add_globals(p)
    p.add_argument("--map", action="append", default=[], help="map file(s); built when omitted")
    p.add_argument("--order", action="append", choices=[o.value for o in SequenceOrder],
                   help="repeatable; default: all orders")
    p.add_argument("--trials", type=int, help="default: sequence_trials")

    p = sub.add_parser("render", help="render one corpus object to a PLY cloud")
    _add_globals(p)
    p.add_argument("--object", type=int, default=0)
    p.add_argument("--azimuth", type=float, default=0.0)
    p.add_argument("--elevation", type=float, default=0.5)

    p = sub.add_parser("export-map", help="write a map file as CSV")
    _add_globals(p)
    p.add_argument("--map", required=True)
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        try:
            cfg = cfg.with_seed(args.seed)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    return cfg


def _map_classes(cfg: ExperimentConfig, choice: str | None) -> list[str]:
    if choice == "all":
        return [c.value for c in ShapeClass]
    return [choice] if choice else cfg.map_classes()


def _load_or_build_maps(cfg: ExperimentConfig, paths, jobs: int) -> dict:
    if paths:
        maps = {}
        for p in paths:
            m = load_map(p)
            maps[m.meta.get("shape_class", cfg.map_class.value)] = m
        return maps
    return {c: build_map(cfg, c, jobs) for c in cfg.map_classes()}


def _cmd_build_corpus(cfg, args, out: Path) -> None:
    d = out / "corpus"
    d.mkdir(parents=True, exist_ok=True)
    lines = ["index,shape_class,file"]
    for i, mesh in enumerate(corpus_meshes(cfg.corpus)):
        name = f"object_{i:03d}_{mesh.shape_class.value}.obj"
        write_obj(mesh, d / name)
        lines.append(f"{i},{mesh.shape_class.value},{name}")
    lines.append(provenance(cfg.config_hash, cfg.master_seed))
    (d / "corpus.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _cmd_build_map(cfg, args, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for cls in _map_classes(cfg, args.shape_class):
        m = build_map(cfg, cls, args.jobs)
        save_map(m, out / f"map_{cls}.gvmap")
        log.info("%s map: %d samples", cls, m.sample_count)


def _cmd_eval_offline(cfg, args, out: Path) -> None:
    maps = _load_or_build_maps(cfg, args.map, args.jobs)
    strategies = [s.strip() for s in args.strategies.split(",") if s.strip()]
    try:
        result = run_offline_eval(cfg, maps, strategies, trials=args.trials, jobs=args.jobs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    emit_report(result, out, cfg.config_hash, cfg.master_seed, maps)


def _cmd_eval_sequence(cfg, args, out: Path) -> None:
    maps = _load_or_build_maps(cfg, args.map, args.jobs)
    orders = args.order or [o.value for o in SequenceOrder]
    result = run_sequence_eval(cfg, maps, orders, trials=args.trials, jobs=args.jobs)
    emit_sequence_report(result, out, cfg.config_hash, cfg.master_seed)


def _cmd_render(cfg, args, out: Path) -> None:
    meshes = corpus_meshes(cfg.corpus)
    if not 0 <= args.object < len(meshes):
        raise ConfigError(f"--object must lie in [0, {len(meshes) - 1}]")
    view = ViewpointSpec(args.azimuth, args.elevation, cfg.view_radius)
    cloud = render_cloud([(meshes[args.object], IDENTITY)], cfg.camera, viewpoint_to_pose(view), cfg.master_seed)
    out.mkdir(parents=True, exist_ok=True)
    write_ply(cloud, out / f"object_{args.object:03d}.ply")


def _cmd_export_map(cfg, args, out: Path) -> None:
    m = load_map(args.map)
    out.mkdir(parents=True, exist_ok=True)
    write_map_exports(m, out, m.meta.get("config_hash", cfg.config_hash), m.meta.get("master_seed", cfg.master_seed))


_COMMANDS = {
    "build-corpus": _cmd_build_corpus,
    "build-map": _cmd_build_map,
    "eval-offline": _cmd_eval_offline,
    "eval-sequence": _cmd_eval_sequence,
    "render": _cmd_render,
    "export-map": _cmd_export_map,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    for key, value in _GLOBAL_DEFAULTS.items():
        if not hasattr(args, key):
            setattr(args, key, value)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be at least 1")
        cfg = _config(args)
        _COMMANDS[args.command](cfg, args, Path(args.out))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (GraspViewError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
