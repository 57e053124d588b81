"""The LM and the detector wired together, plus per-sample encoding and loss."""
from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import textproto as tp
from ..detector import DetPrediction, Detector
from ..diffcore import checkpoint
from ..diffcore.rng import Rng
from ..diffcore.tensor import Tensor
from ..lossmatch import DetLossParts, detection_loss, total_loss
from ..mllm import Generation, Mllm, generate_greedy, lm_loss
from ..synthworld import read_ppm, world_vocab
from .config import RunConfig


@dataclass
class Encoded:
    """A dataset sample turned into arrays the models consume."""
    sample: tp.Sample
    image: np.ndarray
    ids: np.ndarray
    mask: np.ndarray
    det_positions: list[int]
    prompt_len: int
    det_text_ids: np.ndarray
    boxes: np.ndarray

    @property
    def has_det(self) -> bool:
        return self.sample.data_type in tp.DETECTION_TYPES


def encode_sample(sample: tp.Sample, vocab: tp.Vocab, image: np.ndarray, det_only: bool = False) -> Encoded:
    conv = sample.to_conversation()
    words = conv.words()
    ids = np.array([vocab[w] for w in words], dtype=np.int64)
    det_text = tp.train_detector_text(sample)
    det_ids = np.array(tp.tokenize(det_text, vocab), dtype=np.int64)
    return Encoded(sample, image, ids, tp.supervision_mask(words, det_only), conv.det_positions[:1],
                   words.index(tp.ASSISTANT) + 1, det_ids, np.asarray(sample.boxes, dtype=np.float64).reshape(-1, 4))


class ImageCache:
    def __init__(self, root):
        self.root = Path(root)
        self._cache: dict[str, np.ndarray] = {}

    def __call__(self, rel: str) -> np.ndarray:
        if rel not in self._cache:
            self._cache[rel] = read_ppm(self.root / rel)
        return self._cache[rel]


def load_encoded(path, vocab: tp.Vocab, data_types=tp.DATA_TYPES, det_only: bool = False) -> list[Encoded]:
    from ..synthworld import load_split

    images = ImageCache(Path(path).parent)
    return [encode_sample(s, vocab, images(s.image), det_only) for s in load_split(path)
            if s.data_type in data_types]


@dataclass
class SampleLoss:
    total: Tensor
    tok: Tensor
    det: DetLossParts | None


@dataclass
class InferResult:
    answer_ids: list[int]
    answer_text: str
    truncated: bool
    prediction: DetPrediction | None


class System:
    """LM + detector (the detector is absent in LM-only runs)."""

    def __init__(self, cfg: RunConfig, vocab: tp.Vocab | None = None, dtype=np.float32):
        self.cfg = cfg
        self.vocab = vocab or world_vocab()
        root = Rng(cfg.seed)
        mcfg = replace(cfg.mllm, vocab_size=len(self.vocab))
        self.mllm = Mllm(mcfg, root.derive("init", "mllm"), dtype)
        self.det = None
        if not cfg.lm_only:
            dcfg = replace(cfg.det, vocab_size=len(self.vocab), d_model=mcfg.d_model)
            self.det = Detector(dcfg, root.derive("init", "det"), dtype)

    # -- parameters ------------------------------------------------------------
    def named_parameters(self):
        yield from self.mllm.named_parameters("mllm.")
        if self.det is not None:
            yield from self.det.named_parameters("det.")

    def trainable(self) -> list[tuple[str, Tensor]]:
        out = []
        for name, p in self.named_parameters():
            if self.cfg.freeze == "paper" and name.startswith("det.") and not _paper_trainable(name):
                continue
            out.append((name, p))
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        return {n: p.data for n, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        self.mllm.load_state_dict(state, "mllm.")
        if self.det is not None:
            self.det.load_state_dict(state, "det.")

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.cfg.save(out / "config.json")
        checkpoint.save(out / "model.lnna", self.state_dict())

    @classmethod
    def load(cls, ckpt_dir) -> "System":
        d = Path(ckpt_dir)
        system = cls(RunConfig.load(d / "config.json"))
        system.load_state_dict(checkpoint.load(d / "model.lnna"))
        return system

    # -- training --------------------------------------------------------------
    def sample_loss(self, enc: Encoded) -> SampleLoss:
        out = self.mllm(enc.image, enc.ids, enc.det_positions if enc.has_det else ())
        l_tok = lm_loss(out.logits, enc.ids, enc.mask, self.cfg.lm_reduction)
        parts = None
        w = self.cfg.weights
        if enc.has_det and self.det is not None and w.det != 0:
            pred, sel, _ = self.det(enc.image, enc.det_text_ids, out.h_det)
            parts = detection_loss(pred.boxes, pred.logits, enc.boxes, w, self.cfg.focal,
                                   (sel.scores, self.det.centers))
        return SampleLoss(total_loss(l_tok, parts.total if parts else None, w, enc.has_det), l_tok, parts)

    # -- inference -------------------------------------------------------------
    def generate(self, image: np.ndarray, prompt_ids) -> Generation:
        v = self.vocab
        return generate_greedy(self.mllm, image, prompt_ids, self.cfg.max_gen_steps, v.det_id, v.eos_id)

    def detect(self, image: np.ndarray, det_text: str, h_det: np.ndarray | None,
               zero_hdet_slot: bool = False) -> DetPrediction:
        ids = tp.tokenize(det_text, self.vocab)
        h = Tensor(np.asarray(h_det, dtype=self.det.dtype).reshape(1, -1)) if h_det is not None else None
        pred, _, _ = self.det(image, ids, h, zero_hdet_slot)
        return pred

    def infer_prompt(self, image: np.ndarray, prompt_ids, det_text: str) -> InferResult:
        gen = self.generate(image, prompt_ids)
        answer = [i for i in gen.ids if i != self.vocab.eos_id]
        pred = None
        if gen.h_det and self.det is not None:
            pred = self.detect(image, det_text, gen.h_det[0])
        return InferResult(gen.ids, tp.detokenize(answer, self.vocab), gen.truncated, pred)


def _paper_trainable(name: str) -> bool:
    """Detector parameters that stay trainable under the "paper" freeze preset."""
    return name.startswith(("det.bridge.", "det.hdet_const", "det.ln_mqs.", "det.mqs_attn.", "det.sel_bias", "det.layers.",
                            "det.ln_dec.", "det.box_head.", "det.cls_proj.", "det.cls_bias"))
