"""Reference experiments shared by the acceptance suite and ``scripts/``."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .cli import DEFAULT_MIX, gen_data, parse_mix
from .config import RunConfig
from .evaluate import EvalReport, TypeStats, evaluate_accuracy
from .train import train

log = logging.getLogger(__name__)

REASONING = ("rd_short", "rd_long")


@dataclass
class RunSummary:
    name: str
    report: EvalReport
    train_seconds: float
    eval_seconds: float
    final_loss: float
    ckpt: str
    extra: dict = field(default_factory=dict)

    def subset(self, types) -> TypeStats:
        out = TypeStats()
        for t in types:
            s = self.report.by_type.get(t)
            if s is not None:
                out.total += s.total
                out.hits += s.hits
                out.no_det += s.no_det
                out.iou_sum += s.iou_sum
        return out

    def to_dict(self) -> dict:
        rd = self.subset(REASONING)
        return {"name": self.name, "accuracy": self.report.accuracy, "mean_iou": self.report.mean_iou,
                "rd_accuracy": rd.accuracy, "rd_total": rd.total, "train_seconds": round(self.train_seconds, 1),
                "eval_seconds": round(self.eval_seconds, 1), "final_loss": self.final_loss, "ckpt": self.ckpt,
                "by_type": {k: round(v.accuracy, 4) for k, v in self.report.by_type.items()}, **self.extra}


def ensure_data(root, seed: int, counts: dict[str, int], mix: str | dict) -> Path:
    root = Path(root)
    if not (root / "manifest.json").exists():
        gen_data(root, seed, counts, parse_mix(mix) if isinstance(mix, str) else mix)
    return root


def run(name: str, cfg: RunConfig, out_dir, eval_data) -> RunSummary:
    out = Path(out_dir)
    t0 = time.perf_counter()
    res = train(cfg, out)
    t1 = time.perf_counter()
    report = evaluate_accuracy(res.system, eval_data)
    t2 = time.perf_counter()
    summary = RunSummary(name, report, t1 - t0, t2 - t1, res.losses[-1], str(out))
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n")
    (out / "report.txt").write_text(report.table() + "\n")
    log.info("%s: acc=%.4f mIoU=%.4f train=%.0fs", name, report.accuracy, report.mean_iou, t1 - t0)
    return summary


def overfit(work_dir, steps: int = 2000, seed: int = 0, **overrides) -> RunSummary:
    """32 REC samples, default config, scored on the training set itself."""
    work = Path(work_dir)
    data = ensure_data(work / "data", seed, {"train": 32}, {"od": 0.0, "rec": 1.0, "rd": 0.0, "vqa": 0.0})
    cfg = RunConfig.from_dict({"seed": seed, "train_data": str(data / "train.jsonl"), "total_steps": steps,
                               **overrides})
    return run("overfit", cfg, work / "run", data / "train.jsonl")


GENERALIZATION_STEPS = 8000


def generalization(work_dir, steps: int = GENERALIZATION_STEPS, seed: int = 0, modes=("live", "constant"),
                   n_train: int = 2000, n_val_scenes: int = 200, mix: str = DEFAULT_MIX,
                   **overrides) -> dict[str, RunSummary]:
    """Mixed-data training scored on held-out scenes, once per ``hdet_mode``."""
    work = Path(work_dir)
    data = ensure_data(work / "data", seed, {"train": n_train, "val": n_val_scenes}, mix)
    base_det = overrides.pop("det", {})
    out = {}
    for mode in modes:
        det = {**base_det, "hdet_mode": mode}
        cfg = RunConfig.from_dict({"seed": seed, "train_data": str(data / "train.jsonl"),
                                   "val_data": str(data / "val.jsonl"), "total_steps": steps,
                                   "ckpt_every": 1000, "det": det, **overrides})
        out[mode] = run(f"generalization-{mode}", cfg, work / f"run-{mode}", data / "val.jsonl")
    return out
