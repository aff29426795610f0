"""Desk-scale retrieval study.

Trains on a K=30 procedural database and prints the seen-database report, the
clean-view nearest-center rate, the multi-view comparison, the half-resolution
ablation and the unseen-database report.

    python scripts/run_desk_experiment.py --seed 0 --out runs/desk
"""

import argparse
import json
import logging
import time
from pathlib import Path

from lfd.config import RunConfig, desk_config
from lfd.experiment import multiview_bank, multiview_rows, run_seen, run_unseen
from lfd.io import write_bank, write_checkpoint, write_curve, write_json, write_ranked
from lfd.metrics import top_k_accuracy
from lfd.render import Camera


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--config", help="JSON run config (defaults to the desk settings)")
    ap.add_argument("--out", default="runs/desk")
    ap.add_argument("--skip-half", action="store_true", help="skip the 28x28 ablation")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")

    cfg = RunConfig.load(args.config) if args.config else desk_config(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {}

    t0 = time.perf_counter()
    seen = run_seen(cfg, args.seed)
    summary["seen"] = seen.report
    summary["clean_own_center"] = seen.clean_own_center
    summary["train_seconds"] = seen.train_seconds
    write_checkpoint(seen.net, out / "net.lfc", [m.model_id for m in seen.meshes])
    write_bank(seen.bank, out / "bank.lfb")
    write_curve(seen.net.history, out / "curve.csv")
    write_ranked(seen.pred_rows, out / "ranked.jsonl")
    print("seen", json.dumps(seen.report), f"({time.perf_counter() - t0:.0f}s)")
    print("clean views nearest own center:", seen.clean_own_center)

    ex = cfg.experiment
    vb = multiview_bank(seen.net, seen.meshes, ex.multiview_views, Camera.default(ex.image_size),
                        cfg, args.seed)
    mv = multiview_rows(seen.net, seen.pred_queries, vb)
    summary["multiview"] = {
        "top1_center": seen.report["acc_top1"],
        "top1_multiview": top_k_accuracy([(r, g) for _, r, g in mv], 1),
        "comparisons_center": seen.pred_rows[0][1].comparison_count,
        "comparisons_multiview": mv[0][1].comparison_count,
    }
    print("multi-view", summary["multiview"])

    unseen = run_unseen(seen.net, cfg, args.seed)
    write_bank(unseen.bank, out / "unseen_bank.lfb")
    summary["unseen"] = unseen.report
    print("unseen", json.dumps(unseen.report))

    if not args.skip_half:
        half = run_seen(cfg, args.seed, image_size=ex.image_size // 2)
        summary["half_res"] = half.report
        print("half-res", json.dumps(half.report))

    write_json(summary, out / "summary.json")


if __name__ == "__main__":
    main()
