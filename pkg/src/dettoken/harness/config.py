from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from ..detector import DetConfig
from ..lossmatch import LossWeights
from ..mllm import MllmConfig
from ..textproto import DATA_TYPES

FREEZE_PRESETS = ("none", "paper")


@dataclass
class RunConfig:
    seed: int = 0
    train_data: str = ""
    val_data: str = ""
    batch_size: int = 2
    lr: float = 3e-4
    warmup_steps: int = 10
    total_steps: int = 2000
    decay: str = "linear"            # linear | constant
    weight_decay: float = 0.0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_clip: float = 1.0
    weights: LossWeights = field(default_factory=LossWeights)
    mllm: MllmConfig = field(default_factory=MllmConfig)
    det: DetConfig = field(default_factory=DetConfig)
    # "paper": only the MQS module, the detector decoder and the LM are updated
    freeze: str = "none"
    data_types: tuple[str, ...] = DATA_TYPES
    lm_only: bool = False
    supervise: str = "full"          # full | det_only
    lm_reduction: str = "mean"       # mean | sum
    focal: bool = False
    log_every: int = 1
    ckpt_every: int = 500
    max_gen_steps: int = 40

    def validate(self) -> "RunConfig":
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.warmup_steps > self.total_steps:
            raise ValueError("warmup_steps cannot exceed total_steps")
        if self.decay not in ("linear", "constant"):
            raise ValueError(f"unknown decay {self.decay!r}")
        if self.freeze not in FREEZE_PRESETS:
            raise ValueError(f"unknown freeze preset {self.freeze!r}")
        if self.supervise not in ("full", "det_only"):
            raise ValueError(f"unknown supervise mode {self.supervise!r}")
        bad = set(self.data_types) - set(DATA_TYPES)
        if bad:
            raise ValueError(f"unknown data types {sorted(bad)}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "mllm" in d:
            d["mllm"] = MllmConfig(**d["mllm"])
        if "det" in d:
            det = dict(d["det"])
            preset = det.pop("preset", "B")
            d["det"] = DetConfig.from_preset(preset, **det)
        for key in ("betas", "data_types"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d).validate()

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def lr_at(step: int, cfg: RunConfig) -> float:
    """Linear warmup to ``lr`` over ``warmup_steps``, then the configured decay (steps are 1-based)."""
    if cfg.warmup_steps > 0 and step <= cfg.warmup_steps:
        return cfg.lr * step / cfg.warmup_steps
    if cfg.decay == "constant":
        return cfg.lr
    span = max(cfg.total_steps - cfg.warmup_steps, 1)
    return cfg.lr * max(0.0, (cfg.total_steps - step) / span)
