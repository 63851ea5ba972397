"""Command-line entry points.

``export`` runs a job file through the chosen backbone and writes tensors
plus a manifest; ``schedule`` prints the expected feature shapes for a tag.
Exit codes: 0 success, 2 bad input / missing weights / I-O trouble.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

from .backbones import FEATURE_SCHEDULES
from .errors import ExportError
from .export import export_features, parse_job_file


def cmd_export(args) -> int:
    job = parse_job_file(args.job, args.backbone, args.out,
                         weights=args.weights, seed=args.seed)
    result = export_features(job, log=print)
    print(f"backbone={job.backbone}")
    print(f"episodes={len(job.episodes)}")
    print(f"files={len(result.arrays)}")
    print(f"manifest={result.manifest_path}")
    return 0


def cmd_schedule(args) -> int:
    tags = sorted(FEATURE_SCHEDULES) if args.backbone == "all" else [args.backbone]
    for tag in tags:
        schedule = FEATURE_SCHEDULES[tag]
        print(f"backbone={tag} layers={len(schedule)}")
        for i, shape in enumerate(schedule):
            print(f"  layer {i + 1}: {shape}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="featexport",
        description="export backbone features as tensor files plus an "
                    "episode manifest")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("export", help="run a job file through a backbone")
    p.add_argument("--backbone", required=True,
                   choices=sorted(FEATURE_SCHEDULES))
    p.add_argument("--job", required=True, help="episode listing file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--weights", default="random",
                   help="'random' (seeded, offline), 'pretrained', or a "
                        "state-dict path")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("schedule", help="print the expected feature shapes")
    p.add_argument("--backbone", default="all",
                   choices=sorted(FEATURE_SCHEDULES) + ["all"])
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return {"export": cmd_export, "schedule": cmd_schedule}[args.command](args)
    except (ExportError, OSError) as exc:
        print(f"ERROR {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
