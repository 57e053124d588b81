"""Overfit 32 REC samples with the default config and score the training set."""
import argparse
import json
import logging

from dettoken.harness import experiments

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--out", default="runs/overfit")
ap.add_argument("--steps", type=int, default=2000)
ap.add_argument("--seed", type=int, default=0)
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

s = experiments.overfit(args.out, args.steps, args.seed)
print(s.report.table())
print(json.dumps(s.to_dict(), indent=2, sort_keys=True))
