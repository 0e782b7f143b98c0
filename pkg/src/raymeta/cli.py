"""Command-line front end.

Exit codes: 0 success, 1 config validation error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .config import ConfigError, validate
from .pipeline import STAGES, RunManifest, report_timing, run


def _common(p: argparse.ArgumentParser, stage: bool = False):
    p.add_argument("--config", required=True, help="run configuration (YAML or JSON)")
    p.add_argument("--seed", type=int, default=None, help="override trace.seed (u64)")
    p.add_argument("--out", default=None, help="output directory (overrides config and RAYMETA_OUT)")
    p.add_argument("--workers", type=int, default=None, help="worker threads (default: config)")
    p.add_argument("--quiet", action="store_true", help="suppress the summary output")
    if stage:
        p.add_argument("--stage", choices=STAGES, default="all")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="raymeta", description="Radar ray tracing with replayable per-hit meta data")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("validate", help="check a config and report every problem")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--quiet", action="store_true")
    _common(sub.add_parser("run", help="trace, replay, synthesize and annotate"), stage=True)
    _common(sub.add_parser("replay", help="build the radar cube from a saved raypath file"))
    _common(sub.add_parser("annotate", help="decompose and label from raypath + cube"))
    p = sub.add_parser("timing", help="print the timing table of a finished run")
    p.add_argument("manifest")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "timing":
        print(report_timing(RunManifest.load(args.manifest)))
        return 0
    if args.seed is not None and not (0 <= args.seed < 2 ** 64):
        print("error: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 1
    try:
        cfg = validate(args.config, seed=args.seed)
    except ConfigError as exc:
        for line in exc.errors:
            print(f"error: {line}", file=sys.stderr)
        return 1
    if args.command == "validate":
        if not args.quiet:
            print(f"ok: {len(cfg.scene.meshes)} mesh(es), {cfg.scene.n_triangles} triangles, "
                  f"{len(cfg.layout.pairs())} channel(s), {len(cfg.rules)} rule(s)")
        return 0
    stage = {"run": getattr(args, "stage", "all"), "replay": "replay", "annotate": "annotate"}[args.command]
    try:
        manifest = run(cfg, out_dir=args.out, stage=stage, workers=args.workers)
    except Exception as exc:  # noqa: BLE001 - any stage failure maps to exit code 2
        print(f"error: {exc}", file=sys.stderr)
        return 2
    if not args.quiet:
        for artifact in manifest.artifacts:
            print(f"{artifact['path']}  {artifact['sha256'][:16]}")
        print(report_timing(manifest))
    return 0


if __name__ == "__main__":
    sys.exit(main())
