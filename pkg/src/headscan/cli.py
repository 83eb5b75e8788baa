"""``headscan`` command line: one subcommand per pipeline stage plus ``run``."""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import ConfigError, PipelineConfig, config_template, load_config
from .frames import FrameFormatError
from .meshio import MeshFormatError, read_mesh


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML configuration file (defaults apply when omitted)")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--mode", choices=("table", "human"), help="head selection mode")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="headscan", description="Depth-scan a head, fuse it, and prepare it for printing.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "scan-sim": "render a simulated orbit into a frame directory",
        "reconstruct": "track and fuse the frames into a raw mesh",
        "select": "cut the head out of the raw mesh",
        "scale": "scale the head to the printer build volume",
        "export": "write the binary STL for printing",
        "run": "run every stage in order",
    }
    for name, text in helps.items():
        aliases = ["simulate"] if name == "scan-sim" else []
        _add_common(sub.add_parser(name, aliases=aliases, help=text))
    ev = sub.add_parser("evaluate", help="compare two meshes, or the selected head with its reference")
    _add_common(ev)
    ev.add_argument("meshes", nargs="*", type=Path, metavar="MESH", help="reference and test mesh (STL, PLY or OBJ)")
    ev.add_argument("--samples", type=int, help="area-uniform surface samples instead of vertices")
    init = sub.add_parser("init-config", help="print an annotated default configuration")
    init.add_argument("path", nargs="?", type=Path, help="write here instead of stdout")
    return parser


def _config(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig().validate()
    return cfg.with_overrides(args.seed, args.out, args.mode)


def _evaluate_pair(args) -> int:
    if len(args.meshes) != 2:
        raise ConfigError("evaluate takes exactly two mesh files (reference, test) or none")
    ref, test = (read_mesh(p) for p in args.meshes)
    out = args.out if args.out is not None else Path(".")
    sampling = args.samples if args.samples is not None else "vertices"
    report = pipeline.evaluate_meshes(ref, test, out, sampling, args.seed or 0)
    sys.stdout.write(report.to_text())
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-config":
            text = config_template()
            if args.path:
                args.path.write_text(text)
            else:
                sys.stdout.write(text)
            return 0
        if args.command == "evaluate" and args.meshes:
            try:
                return _evaluate_pair(args)
            except (OSError, MeshFormatError, ValueError) as e:
                raise pipeline.StageError("evaluate", str(e)) from e
        cfg = _config(args)
        if args.command == "run":
            result = pipeline.run_pipeline(cfg)
            for stage, sec in result["timings"].items():
                print(f"{stage:12s} {sec:8.2f} s")
            print(f"artifacts in {result['output_dir']}")
            return 0
        if args.command == "evaluate" and args.samples is not None:
            cfg = replace(cfg, evaluation=replace(cfg.evaluation, sampling=args.samples))
        stage = "simulate" if args.command in ("scan-sim", "simulate") else args.command
        summary = pipeline.STAGE_FUNCS[stage](cfg)
        if isinstance(summary, dict):
            for k, v in summary.items():
                print(f"{k} = {v}")
        else:
            print(summary)
        return 0
    except ConfigError as e:
        print(f"headscan: config: {e}", file=sys.stderr)
        return pipeline.EXIT_CODES["config"]
    except pipeline.StageError as e:
        print(f"headscan: {e}", file=sys.stderr)
        return e.exit_code
    except FrameFormatError as e:
        print(f"headscan: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
