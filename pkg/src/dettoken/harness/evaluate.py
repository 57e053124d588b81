"""Accuracy at IoU 0.5: scoring, the report type and the model-driven evaluation loop."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import textproto as tp
from ..diffcore.tensor import Tensor
from ..geometry import Box, iou
from .system import Encoded, System, load_encoded

HIT_IOU = 0.5


@dataclass
class Scored:
    id: str
    data_type: str
    iou: float
    hit: bool
    no_det: bool = False


@dataclass
class TypeStats:
    total: int = 0
    hits: int = 0
    no_det: int = 0
    iou_sum: float = 0.0

    @property
    def accuracy(self) -> float:
        return self.hits / self.total if self.total else 0.0

    @property
    def mean_iou(self) -> float:
        return self.iou_sum / self.total if self.total else 0.0

    def add(self, s: Scored) -> None:
        self.total += 1
        self.hits += int(s.hit)
        self.no_det += int(s.no_det)
        self.iou_sum += s.iou


@dataclass
class EvalReport:
    dataset: str
    overall: TypeStats
    by_type: dict[str, TypeStats] = field(default_factory=dict)
    samples: list[Scored] = field(default_factory=list)

    @property
    def accuracy(self) -> float:
        return self.overall.accuracy

    @property
    def mean_iou(self) -> float:
        return self.overall.mean_iou

    def to_dict(self) -> dict:
        def stats(s: TypeStats) -> dict:
            return {"total": s.total, "hits": s.hits, "no_det": s.no_det,
                    "accuracy": s.accuracy, "mean_iou": s.mean_iou}
        return {"dataset": self.dataset, **stats(self.overall),
                "by_type": {k: stats(v) for k, v in self.by_type.items()},
                "samples": [asdict(s) for s in self.samples]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def table(self) -> str:
        rows = [(k, v) for k, v in self.by_type.items()] + [("all", self.overall)]
        head = f"{'type':<10}{'n':>6}{'hits':>6}{'no_det':>8}{'acc@0.5':>10}{'mIoU':>8}"
        lines = [f"dataset: {self.dataset}", head, "-" * len(head)]
        for name, s in rows:
            lines.append(f"{name:<10}{s.total:>6}{s.hits:>6}{s.no_det:>8}{s.accuracy:>10.4f}{s.mean_iou:>8.4f}")
        return "\n".join(lines)


def score_one(sid: str, data_type: str, pred: Box | None, gts) -> Scored:
    """Hit iff IoU >= 0.5. With several ground truths (OD) the best-overlapping one counts."""
    if pred is None:
        return Scored(sid, data_type, 0.0, False, True)
    best = max(iou(pred, Box(*g)) for g in gts)
    return Scored(sid, data_type, float(best), bool(best >= HIT_IOU))


def score_predictions(preds: list[tuple[str, str, Box | None, list]], dataset: str = "") -> EvalReport:
    """``preds``: (id, data_type, predicted box or None, ground-truth boxes)."""
    overall = TypeStats()
    by_type: dict[str, TypeStats] = {}
    scored = []
    for sid, dtype, pred, gts in preds:
        s = score_one(sid, dtype, pred, gts)
        scored.append(s)
        overall.add(s)
        by_type.setdefault(dtype, TypeStats()).add(s)
    by_type = {k: by_type[k] for k in tp.DATA_TYPES if k in by_type}
    return EvalReport(dataset, overall, by_type, scored)


def detector_text_for(enc: Encoded) -> str:
    """The text the detector sees at test time: the slot parsed back out of the prompt,
    or the whole category list for OD."""
    kind, slot = tp.parse_prompt(enc.sample.to_conversation().user_text())
    if kind == "od":
        return tp.od_detector_text(enc.sample.category_list) if enc.sample.category_list else slot
    return slot


def predict(system: System, enc: Encoded) -> Box | None:
    prompt = enc.ids[:enc.prompt_len]
    res = system.infer_prompt(enc.image, prompt, detector_text_for(enc))
    return res.prediction.pred if res.prediction is not None else None


def evaluate_samples(system: System, data: list[Encoded], dataset: str = "") -> EvalReport:
    preds = []
    for enc in data:
        if not enc.has_det:
            continue
        preds.append((enc.sample.id, enc.sample.data_type, predict(system, enc), enc.boxes.tolist()))
    return score_predictions(preds, dataset)


def evaluate_accuracy(ckpt_or_system, data_path) -> EvalReport:
    system = ckpt_or_system if isinstance(ckpt_or_system, System) else System.load(ckpt_or_system)
    data = load_encoded(data_path, system.vocab, tp.DETECTION_TYPES)
    return evaluate_samples(system, data, Path(data_path).name)


def teacher_forced_boxes(system: System, data: list[Encoded]) -> list[Box]:
    """Detector output with h_det read from the ground-truth answer (no generation)."""
    out = []
    for enc in data:
        h = system.mllm(enc.image, enc.ids, enc.det_positions).h_det
        pred, _, _ = system.det(enc.image, np.asarray(enc.det_text_ids), Tensor(h.data))
        out.append(pred.pred)
    return out
