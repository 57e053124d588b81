"""Toy multimodal causal LM: image patches as a prefix, then text tokens.

Image tokens attend bidirectionally among themselves and are visible to every
text position; text attends causally. The hidden state at the ``<DET>`` position
is the handle the detector consumes.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .diffcore import nn
from .diffcore import tensor as T
from .diffcore.rng import Rng
from .diffcore.tensor import Tensor


class ContextError(ValueError):
    pass


@dataclass
class MllmConfig:
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    patch: int = 8
    image_size: int = 64
    max_text: int = 96
    vocab_size: int = 0
    # h_det read after the final layer norm (True) or from the raw residual stream
    hdet_post_norm: bool = True

    @property
    def n_image_tokens(self) -> int:
        return (self.image_size // self.patch) ** 2

    @property
    def context(self) -> int:
        return self.n_image_tokens + self.max_text

    def validate(self) -> "MllmConfig":
        if self.d_model % self.n_heads:
            raise ValueError("d_model must be divisible by n_heads")
        if self.image_size % self.patch:
            raise ValueError("image_size must be a multiple of patch")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MllmOutput:
    logits: Tensor          # (T, V), row j predicts token j+1
    hidden: Tensor          # (n_image + T, d_model)
    h_det: Tensor | None    # (n_det, d_model)
    det_positions: list[int] = field(default_factory=list)


def image_to_float(img: np.ndarray) -> np.ndarray:
    """uint8 RGB -> float in roughly [-1, 1]."""
    return np.asarray(img, dtype=np.float32) / 127.5 - 1.0


def patchify(img: np.ndarray, patch: int) -> np.ndarray:
    """(H, W, C) -> (H/p * W/p, p*p*C), row-major over the patch grid."""
    h, w, c = img.shape
    g_h, g_w = h // patch, w // patch
    x = img[:g_h * patch, :g_w * patch].reshape(g_h, patch, g_w, patch, c)
    return x.transpose(0, 2, 1, 3, 4).reshape(g_h * g_w, patch * patch * c)


def prefix_causal_mask(n_image: int, n_text: int) -> np.ndarray:
    """True where attention is blocked."""
    n = n_image + n_text
    blocked = np.zeros((n, n), dtype=bool)
    blocked[:n_image, n_image:] = True
    blocked[n_image:, n_image:] = np.triu(np.ones((n_text, n_text), dtype=bool), 1)
    return blocked


class Mllm(nn.Module):
    def __init__(self, cfg: MllmConfig, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_model
        self.patch_embed = nn.Linear(cfg.patch * cfg.patch * 3, d, rng, dtype=dtype)
        self.img_pos = nn.param(rng.normal((cfg.n_image_tokens, d), 0.02, dtype))
        self.tok_emb = nn.Embedding(cfg.vocab_size, d, rng, dtype=dtype)
        self.txt_pos = nn.param(rng.normal((cfg.max_text, d), 0.02, dtype))
        self.blocks = [nn.Block(d, cfg.n_heads, rng, dtype=dtype) for _ in range(cfg.n_layers)]
        self.ln_f = nn.LayerNorm(d, dtype)
        self.head = nn.Linear(d, cfg.vocab_size, rng, dtype=dtype)
        self._masks: dict[int, np.ndarray] = {}

    @property
    def dtype(self):
        return self.head.weight.dtype

    def _mask(self, n_text: int) -> np.ndarray:
        if n_text not in self._masks:
            self._masks[n_text] = prefix_causal_mask(self.cfg.n_image_tokens, n_text)
        return self._masks[n_text]

    def forward(self, image: np.ndarray, ids, det_positions=(), image_id: int | None = None) -> MllmOutput:
        """``image`` is uint8 (H, W, 3) or already-float; ``ids`` the full text stream."""
        ids = np.asarray(ids, dtype=np.int64)
        n_text = len(ids)
        if n_text > self.cfg.max_text:
            raise ContextError(f"text length {n_text} exceeds context of {self.cfg.max_text} tokens")
        if image_id is not None and image_id not in ids:
            raise ContextError("token stream has no <image> placeholder")
        pixels = image_to_float(image) if np.asarray(image).dtype == np.uint8 else np.asarray(image)
        patches = patchify(pixels.astype(self.dtype), self.cfg.patch)
        img_tok = self.patch_embed(Tensor(patches)) + self.img_pos
        txt_tok = self.tok_emb(ids) + self.txt_pos[:n_text]
        x = T.concat([img_tok, txt_tok], axis=0)
        mask = self._mask(n_text)
        for blk in self.blocks:
            x = blk(x, mask)
        normed = self.ln_f(x)
        n_img = self.cfg.n_image_tokens
        logits = self.head(normed[n_img:])
        hidden = normed if self.cfg.hdet_post_norm else x
        det_positions = list(det_positions)
        h_det = T.gather(hidden, [n_img + p for p in det_positions], axis=0) if det_positions else None
        return MllmOutput(logits, hidden, h_det, det_positions)

    __call__ = forward


class EmptySupervision(ValueError):
    pass


def lm_loss(logits: Tensor, ids, mask, reduction: str = "mean") -> Tensor:
    """Negative log-likelihood of supervised tokens.

    ``mask[j]`` marks token j as a target; it is predicted by ``logits[j - 1]``.
    ``reduction`` is "mean" (per supervised token) or "sum".
    """
    ids = np.asarray(ids, dtype=np.int64)
    mask = np.asarray(mask, dtype=logits.dtype)
    weights = mask[1:]
    n = float(weights.sum())
    if n <= 0:
        raise EmptySupervision("supervision mask is all zero")
    per_tok = T.cross_entropy(logits[:-1], ids[1:])
    total = (per_tok * weights).sum()
    return total * (1.0 / n) if reduction == "mean" else total


@dataclass
class Generation:
    ids: list[int]                 # generated tokens only
    h_det: list[np.ndarray]        # one per emitted <DET>
    truncated: bool


def generate_greedy(model: Mllm, image: np.ndarray, prompt_ids, max_steps: int, det_id: int,
                    eos_id: int) -> Generation:
    """Greedy decoding; h_det is read at each ``<DET>`` position once it is part of the prefix."""
    ids = list(map(int, prompt_ids))
    start = len(ids)
    h_det: list[np.ndarray] = []
    for _ in range(max_steps + 1):
        out = model.forward(image, ids)
        if len(ids) > start and ids[-1] == det_id:
            h_det.append(out.hidden.data[model.cfg.n_image_tokens + len(ids) - 1].copy())
        if len(ids) > start and ids[-1] == eos_id:
            return Generation(ids[start:], h_det, False)
        if len(ids) - start >= max_steps or len(ids) >= model.cfg.max_text:
            break
        ids.append(int(np.argmax(out.logits.data[-1])))
    return Generation(ids[start:], h_det, True)
