"""Detector capacity sweep over the T / B / L presets on the mixed-data split."""
import argparse
import json
import logging
from pathlib import Path

from dettoken.harness import experiments
from dettoken.harness.config import RunConfig

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--out", default="runs/capacity")
ap.add_argument("--steps", type=int, default=4000)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--presets", default="T,B,L")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

out = Path(args.out)
data = experiments.ensure_data(out / "data", args.seed, {"train": 2000, "val": 200}, experiments.DEFAULT_MIX)
rows = {}
for preset in args.presets.split(","):
    cfg = RunConfig.from_dict({"seed": args.seed, "train_data": str(data / "train.jsonl"),
                               "total_steps": args.steps, "det": {"preset": preset}})
    s = experiments.run(f"capacity-{preset}", cfg, out / f"run-{preset}", data / "val.jsonl")
    rows[preset] = s.to_dict()
print(f"{'preset':<8}{'acc@0.5':>10}{'mIoU':>8}{'RD acc':>8}{'train s':>10}")
for p, r in rows.items():
    print(f"{p:<8}{r['accuracy']:>10.4f}{r['mean_iou']:>8.4f}{r['rd_accuracy']:>8.4f}{r['train_seconds']:>10.0f}")
print(json.dumps(rows, indent=2, sort_keys=True))
