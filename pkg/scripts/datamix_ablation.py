"""Drop one training-data stream at a time (OD, VQA, reasoning) and score held-out scenes."""
import argparse
import json
import logging
from pathlib import Path

from dettoken import textproto as tp
from dettoken.harness import experiments
from dettoken.harness.config import RunConfig

VARIANTS = {
    "all": tp.DATA_TYPES,
    "no-od": tuple(t for t in tp.DATA_TYPES if t != "od"),
    "no-vqa": tuple(t for t in tp.DATA_TYPES if t != "vqa"),
    "no-rd": tuple(t for t in tp.DATA_TYPES if not t.startswith("rd")),
}

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--out", default="runs/datamix")
ap.add_argument("--steps", type=int, default=4000)
ap.add_argument("--seed", type=int, default=0)
ap.add_argument("--variants", default=",".join(VARIANTS))
args = ap.parse_args()
logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

out = Path(args.out)
data = experiments.ensure_data(out / "data", args.seed, {"train": 2000, "val": 200}, experiments.DEFAULT_MIX)
rows = {}
for name in args.variants.split(","):
    cfg = RunConfig.from_dict({"seed": args.seed, "train_data": str(data / "train.jsonl"),
                               "total_steps": args.steps, "data_types": list(VARIANTS[name])})
    rows[name] = experiments.run(f"datamix-{name}", cfg, out / f"run-{name}", data / "val.jsonl").to_dict()
print(f"{'variant':<8}{'acc@0.5':>10}{'RD acc':>8}  per type")
for n, r in rows.items():
    print(f"{n:<8}{r['accuracy']:>10.4f}{r['rd_accuracy']:>8.4f}  {r['by_type']}")
print(json.dumps(rows, indent=2, sort_keys=True))
