"""Run the published synthetic experiment and store its results under results/synthetic_oracle.

    python scripts/oracle_run.py WORKDIR            # run every stage in WORKDIR, then collect
    python scripts/oracle_run.py WORKDIR --collect  # only collect from a finished WORKDIR
"""

import argparse
import hashlib
import json
import logging
import platform
import shutil
import time
from pathlib import Path

import torch

from motifbox import pipeline

REPO = Path(__file__).resolve().parents[1]
CONFIG = REPO / "configs" / "synthetic.json"
DEST = REPO / "results" / "synthetic_oracle"
KEEP = ["anchors.txt", "anchors.json", "thresholds.json", "report_val.json", "report_test.json",
        "run/train_log.csv", "corpus/manifest.json", "corpus/splits.json"]


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("workdir")
    ap.add_argument("--collect", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    ws = pipeline.Workspace(args.workdir, pipeline.ExperimentConfig.load(CONFIG))
    timing = {}
    if not args.collect:
        t0 = time.perf_counter()
        timing = pipeline.run_all(ws)
        timing = {"pipeline_seconds": time.perf_counter() - t0, "epochs_run": timing["epochs_run"]}
    DEST.mkdir(parents=True, exist_ok=True)
    for rel in KEEP:
        shutil.copyfile(ws.root / rel, DEST / Path(rel).name)
    val = json.loads((ws.root / "report_val.json").read_text())
    test = json.loads((ws.root / "report_test.json").read_text())
    summary = {
        "config": json.loads(CONFIG.read_text()),
        "checkpoint_sha256": hashlib.sha256((ws.root / "run" / "best.ckpt").read_bytes()).hexdigest(),
        "detections_sha256": hashlib.sha256((ws.root / "detections.jsonl").read_bytes()).hexdigest(),
        "val": {k: val[k] for k in ("mAP", "mAP50", "mAP75", "micro_f1")},
        "test": {k: test[k] for k in ("mAP", "mAP50", "mAP75", "micro_f1")},
        "platform": {"python": platform.python_version(), "torch": torch.__version__,
                     "machine": platform.machine()},
        **timing,
    }
    (DEST / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(json.dumps(summary, indent=2, sort_keys=True))


if __name__ == "__main__":
    main()
