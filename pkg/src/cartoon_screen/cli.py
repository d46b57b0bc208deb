"""Command-line entry point: ``cartoon-screen {extract,train,predict,evaluate,probe}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .errors import ScreenError
from .pipeline import cmd_evaluate, cmd_extract, cmd_predict, cmd_probe, cmd_train, load_config

log = logging.getLogger("cartoon_screen")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", type=Path, help="JSON-lines manifest of videos")
    p.add_argument("--config", type=Path, help="JSON file with PipelineConfig fields; flags override it")
    p.add_argument("--cache-dir", type=Path, help="feature cache directory")
    p.add_argument("--model-dir", type=Path, help="where SVM model files live (default: <cache-dir>/models)")
    p.add_argument("--descriptor-static", help="shipped descriptor name or descriptor JSON path for frames")
    p.add_argument("--descriptor-motion", help="shipped descriptor name or descriptor JSON path for motion")
    p.add_argument("--seed", type=int)
    p.add_argument("--threshold", type=float, help="p_fused >= threshold is labelled sensitive")
    p.add_argument("--svm-c", type=float)
    p.add_argument("--fps", dest="sampling_fps", type=float, help="sampling rate for both streams")
    p.add_argument("--workers", type=int)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cartoon-screen", description="Two-stream screening of cartoon videos.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("extract", help="decode, run the CNN and cache pooled features for both streams")
    _common(p)
    p.add_argument("--dump-motion", type=Path, help="write rasterized motion fields as PNGs under this directory")

    p = sub.add_parser("train", help="fit the static and motion SVMs on the train split")
    _common(p)

    p = sub.add_parser("predict", help="score videos with trained models and write JSON-lines predictions")
    _common(p)
    p.add_argument("--out", type=Path, default=Path("predictions.jsonl"))

    p = sub.add_parser("evaluate", help="run the 1x2 fold protocol or the held-out test")
    _common(p)
    p.add_argument("--protocol", choices=("1x2", "heldout"), default="1x2")
    p.add_argument("--out", type=Path, default=Path("report"), help="output directory for report.json/report.txt")

    p = sub.add_parser("probe", help="validate the manifest and probe each video's duration")
    _common(p)
    return parser


def _config(args):
    return load_config(
        args.config,
        manifest_path=args.manifest,
        cache_dir=args.cache_dir,
        model_dir=args.model_dir,
        descriptor_static=args.descriptor_static,
        descriptor_motion=args.descriptor_motion,
        seed=args.seed,
        threshold=args.threshold,
        svm_c=args.svm_c,
        sampling_fps=args.sampling_fps,
        workers=args.workers,
        dump_motion=getattr(args, "dump_motion", None),
    )


def run(args) -> int:
    config = _config(args)
    if args.command == "extract":
        summary = cmd_extract(config)
        for o in summary.outcomes:
            for stream, reason in o.errors.items():
                print(f"{o.video_id}\t{stream}\t{reason}")
        print(summary.headline())
        return 0 if summary.n_ok > 0 else 1
    if args.command == "train":
        paths = cmd_train(config)
        for stream, path in paths.items():
            print(f"{stream.value}: {path}")
        return 0
    if args.command == "predict":
        preds = cmd_predict(config, args.out)
        print(f"{len(preds)} predictions -> {args.out}")
        return 0
    if args.command == "evaluate":
        report = cmd_evaluate(config, args.protocol, args.out)
        print(report.table())
        return 0
    if args.command == "probe":
        rows = cmd_probe(config)
        for row in rows:
            print(json.dumps(row))
        return 1 if any("error" in r for r in rows) else 0
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return run(args)
    except ScreenError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
