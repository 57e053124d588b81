"""Train on mixed data, score 200 held-out scenes, and compare against a detector fed a
learned constant instead of the LM's <DET> state."""
import argparse
import json
import logging

from dettoken.harness import experiments

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--out", default="runs/generalization")
ap.add_argument("--steps", type=int, default=experiments.GENERALIZATION_STEPS)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--modes", default="live,constant")
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

runs = experiments.generalization(args.out, args.steps, args.seed, tuple(args.modes.split(",")))
for name, s in runs.items():
    print(f"== {name}\n{s.report.table()}")
rows = {k: v.to_dict() for k, v in runs.items()}
if {"live", "constant"} <= set(rows):
    rows["rd_gap_points"] = 100 * (rows["live"]["rd_accuracy"] - rows["constant"]["rd_accuracy"])
print(json.dumps(rows, indent=2, sort_keys=True))
