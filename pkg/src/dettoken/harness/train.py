from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..diffcore.rng import Rng
from ..diffcore.tensor import Graph, backward
from .config import RunConfig, lr_at
from .optim import AdamW
from .system import Encoded, System, load_encoded

log = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class StepMetrics:
    step: int
    L: float
    L_tok: float
    L_det: float
    lr: float
    grad_norm: float

    def to_json(self) -> str:
        return json.dumps({"step": self.step, "L": self.L, "L_tok": self.L_tok, "L_det": self.L_det,
                           "lr": self.lr, "grad_norm": self.grad_norm})


@dataclass
class TrainResult:
    system: System
    history: list[StepMetrics] = field(default_factory=list)

    @property
    def losses(self) -> list[float]:
        return [m.L for m in self.history]


class BatchStream:
    """Epoch-wise shuffled batches; order is a function of the seed only."""

    def __init__(self, n: int, batch_size: int, seed: int):
        if n == 0:
            raise ValueError("training set is empty")
        self.n = n
        self.bs = batch_size
        self.rng = Rng(seed, "batches")
        self.epoch = 0
        self.order: list[int] = []

    def next(self) -> list[int]:
        out = []
        while len(out) < self.bs:
            if not self.order:
                self.order = list(self.rng.derive(self.epoch).permutation(self.n))
                self.epoch += 1
            out.append(int(self.order.pop(0)))
        return out


def train_step(system: System, opt: AdamW, batch: list[Encoded], lr: float, clip: float) -> tuple[float, float, float, float]:
    opt.zero_grad()
    with Graph() as g:
        parts = [system.sample_loss(enc) for enc in batch]
        loss = parts[0].total
        for p in parts[1:]:
            loss = loss + p.total
        loss = loss * (1.0 / len(batch))
    L = float(loss.data)
    l_tok = float(np.mean([float(p.tok.data) for p in parts]))
    dets = [float(p.det.total.data) for p in parts if p.det is not None]
    l_det = float(np.mean(dets)) if dets else 0.0
    if not math.isfinite(L):
        raise TrainingDiverged(f"non-finite loss {L}")
    backward(g, loss)
    norm = opt.clip(clip)
    opt.step(lr)
    return L, l_tok, l_det, norm


def train(cfg: RunConfig, out_dir=None, data: list[Encoded] | None = None, steps: int | None = None,
          system: System | None = None) -> TrainResult:
    """Train from ``cfg``. With ``out_dir`` the metrics log and checkpoints are written there;
    a non-finite loss aborts and leaves the last good checkpoint in place."""
    cfg.validate()
    system = system or System(cfg)
    if data is None:
        types = cfg.data_types
        data = load_encoded(cfg.train_data, system.vocab, types, cfg.supervise == "det_only")
    if not data:
        raise ValueError("no training samples after data_types filtering")
    opt = AdamW(system.trainable(), cfg.betas, cfg.eps, cfg.weight_decay)
    stream = BatchStream(len(data), cfg.batch_size, cfg.seed)
    total = cfg.total_steps if steps is None else steps
    out = Path(out_dir) if out_dir is not None else None
    metrics_file = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_file = open(out / "metrics.jsonl", "w")
    result = TrainResult(system)
    try:
        for step in range(1, total + 1):
            lr = lr_at(step, cfg)
            batch = [data[i] for i in stream.next()]
            try:
                L, l_tok, l_det, norm = train_step(system, opt, batch, lr, cfg.grad_clip)
            except (TrainingDiverged, FloatingPointError) as e:
                log.error("step %d: %s; keeping last checkpoint", step, e)
                raise TrainingDiverged(f"step {step}: {e}") from e
            m = StepMetrics(step, L, l_tok, l_det, lr, norm)
            result.history.append(m)
            if metrics_file is not None and (step % cfg.log_every == 0 or step == total):
                metrics_file.write(m.to_json() + "\n")
                metrics_file.flush()
            if step % max(cfg.log_every, 50) == 0:
                log.info("step %d L=%.4f L_tok=%.4f L_det=%.4f lr=%.2e", step, L, l_tok, l_det, lr)
            if out is not None and cfg.ckpt_every and step % cfg.ckpt_every == 0:
                system.save(out)
        if out is not None:
            system.save(out)
    finally:
        if metrics_file is not None:
            metrics_file.close()
    return result
