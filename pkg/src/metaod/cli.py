"""Command-line entry point: ``metaod <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from .campaign import CampaignConfig, lint_records, read_records, regenerate_summary, run_campaign, write_summary
from .core import ImageBuffer
from .errors import MetaODError
from .extraction import extract_all, load_annotations
from .insertion import RELOCATED
from .naturalness import naturalness
from .pool import ObjectPool, load_pool, prune, remove_instances, save_pool

log = logging.getLogger("metaod")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff"}


def _cmd_extract(args) -> int:
    annotations = load_annotations(args.annotations)
    instances, problems = extract_all(args.images, annotations)
    for p in problems:
        log.warning("%s", p)
    pool = ObjectPool.from_instances(instances)
    save_pool(pool, args.pool)
    print(f"extracted {len(instances)} instances in {len(pool.labels())} categories; {len(problems)} skipped")
    return 0


def _cmd_prune(args) -> int:
    pool = load_pool(args.pool)
    kept = prune(pool, args.keep)
    if args.out:
        save_pool(kept, args.out)
        print(f"kept {len(kept)} of {len(pool)} instances in {args.out}")
    else:
        removed = remove_instances(args.pool, kept)
        print(f"kept {len(kept)} of {len(pool)} instances; removed {removed}")
    return 0


def _cmd_test(args) -> int:
    cfg = CampaignConfig.load(args.config)
    if args.save_images:
        cfg.save_images = True
    summary = run_campaign(cfg, workers=args.workers, cache_dir=args.cache)
    print(json.dumps(summary.to_json(), indent=2))
    return 0


def _cmd_report(args) -> int:
    records = read_records(args.trials)
    problems = lint_records(records)
    for p in problems:
        log.error("%s", p)
    summary = regenerate_summary(args.trials)
    write_summary(summary, Path(args.trials).parent)
    print(json.dumps(summary.to_json(), indent=2))
    return 1 if problems else 0


def _cmd_naturalness(args) -> int:
    """Score the saved synthetic PNGs that sit next to the trial log."""
    trials_path = Path(args.trials)
    synth_dir = trials_path.parent / "synthetic"
    backgrounds = {}
    for p in sorted(Path(args.backgrounds).iterdir()):
        if p.suffix.lower() in IMAGE_SUFFIXES:
            img = ImageBuffer.open(p)
            backgrounds[img.content_hash] = img
    scores = {"inserted": [], "relocated": []}
    missing = 0
    for r in read_records(trials_path):
        png = synth_dir / f"{r['id']}.png"
        bg = backgrounds.get(r["background"])
        if not png.exists() or bg is None:
            missing += 1
            continue
        key = "relocated" if r["mode"] == RELOCATED else "inserted"
        scores[key].append(naturalness(ImageBuffer.open(png), bg))
    out = {}
    for key, vals in scores.items():
        out[f"{key}_mean"] = float(np.mean(vals)) if vals else None
        out[f"{key}_count"] = len(vals)
    out["unscored"] = missing
    print(json.dumps(out, indent=2))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metaod", description="Metamorphic testing of black-box object detectors.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="cut annotated objects out of images into a pool")
    p.add_argument("--images", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--pool", required=True)
    p.set_defaults(func=_cmd_extract)

    p = sub.add_parser("prune", help="keep the largest instances per category")
    p.add_argument("--pool", required=True)
    p.add_argument("--keep", type=float, default=0.10)
    p.add_argument("--out", help="write the pruned pool here instead of deleting in place")
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("test", help="run a campaign against a detector")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--cache", help="response cache directory (default: <out_dir>/cache)")
    p.add_argument("--save-images", action="store_true")
    p.set_defaults(func=_cmd_test)

    p = sub.add_parser("report", help="regenerate summary.json from trials.jsonl")
    p.add_argument("--trials", required=True)
    p.set_defaults(func=_cmd_report)

    p = sub.add_parser("naturalness", help="HOG intersection of saved synthetics against backgrounds")
    p.add_argument("--trials", required=True)
    p.add_argument("--backgrounds", required=True)
    p.set_defaults(func=_cmd_naturalness)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MetaODError, OSError, ValueError) as exc:
        print(f"metaod: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
