"""``motifbox`` command line: one subcommand per experiment stage.

All subcommands share ``--config`` (JSON experiment config), ``--seed`` (overrides the
config seed), ``--split {version,act}`` and ``--out`` (working directory).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import pipeline
from .errors import MotifboxError

log = logging.getLogger("motifbox")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="experiment config (JSON); defaults apply when omitted")
    p.add_argument("--seed", type=int, help="seed for synthesis, anchor fitting and training")
    p.add_argument("--split", choices=("version", "act"), help="split mode")
    p.add_argument("--out", default=".", help="working directory (default: current directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="motifbox", description="Leitmotif boundary detection over CQT clips.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic motif corpus")
    p.add_argument("--wav", action="store_true", help="also write WAV files")
    sub.add_parser("anchors", help="fit anchor widths by K-means on training instances")
    sub.add_parser("prepare", help="window acts into clips and build targets")
    sub.add_parser("train", help="train the detector with early stopping")
    sub.add_parser("tune", help="grid-search per-class thresholds on the validation split")
    p = sub.add_parser("evaluate", help="write an evaluation report for a split")
    p.add_argument("--on", default="test", choices=("train", "val", "test"))
    p = sub.add_parser("infer", help="recording-level detections as JSON lines")
    p.add_argument("--on", default="test", choices=("train", "val", "test", "all"))
    p.add_argument("--detections", help="output file (default: <out>/detections.jsonl)")
    p = sub.add_parser("plot", help="SVG of one clip with ground truth and detections")
    p.add_argument("clip", help="recording_id/act_id[@origin_sec]")
    p.add_argument("--svg", help="output file (default: <out>/plots/...)")
    for p in sub.choices.values():
        _common(p)
    return parser


def _workspace(args) -> pipeline.Workspace:
    cfg = pipeline.ExperimentConfig.load(args.config) if args.config else pipeline.ExperimentConfig(synth={})
    if args.seed is not None:
        cfg.seed = args.seed
    if args.split is not None:
        cfg.split_mode = args.split
    return pipeline.Workspace(args.out, cfg)


def _print(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        ws = _workspace(args)
        cmd = args.command
        if cmd == "synth":
            _print(pipeline.stage_synth(ws, wav=args.wav))
        elif cmd == "anchors":
            rep = pipeline.stage_anchors(ws)
            _print({"anchors": list(rep.anchors.widths), "mean_best_iou": rep.mean_best_iou})
        elif cmd == "prepare":
            data = pipeline.stage_prepare(ws)
            _print({"clips": len(data.entries), "prepared": str(ws.prepared)})
        elif cmd == "train":
            ckpt, tlog = pipeline.stage_train(ws)
            _print({"checkpoint": str(ckpt), "best_epoch": tlog.best_epoch, "best_val_map50": tlog.best_val_map50,
                    "epochs_run": len(tlog.rows), "stopped_early": tlog.stopped_early})
        elif cmd == "tune":
            _print(pipeline.stage_tune(ws).to_json())
        elif cmd == "evaluate":
            rep = pipeline.stage_evaluate(ws, args.on)
            _print({k: rep[k] for k in ("split", "mAP", "mAP50", "mAP75", "micro_f1")})
        elif cmd == "infer":
            print(pipeline.stage_infer(ws, None if args.on == "all" else args.on, args.detections))
        elif cmd == "plot":
            target, _, origin = args.clip.partition("@")
            rec, _, act = target.partition("/")
            if not act:
                raise MotifboxError(f"clip must look like recording/act[@origin], got {args.clip!r}")
            print(pipeline.stage_plot(ws, rec, act, float(origin or 0.0), args.svg))
    except (MotifboxError, OSError) as exc:
        log.error("%s", exc)
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
