"""Toy open-set detector conditioned on the LM's ``<DET>`` embedding.

Pipeline for one image / caption pair::

    encode_pair  -> f_img (G*G, d), f_txt (T, d)          dual encoders + fusion
    mqs_select   -> activated f_img, top-k query features  h_det cross-attention + text relevance
    det_decode   -> k boxes, k objectness logits, top-1    h_det joins every text cross-attention
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .diffcore import nn
from .diffcore import tensor as T
from .diffcore.rng import Rng
from .diffcore.tensor import Tensor
from .geometry import Box
from .mllm import image_to_float

PRESETS = {
    "T": dict(d_det=64, n_heads=4, enc_layers=1, fusion_layers=1, dec_layers=2),
    "B": dict(d_det=128, n_heads=4, enc_layers=1, fusion_layers=1, dec_layers=2),
    "L": dict(d_det=192, n_heads=6, enc_layers=2, fusion_layers=2, dec_layers=3),
}


@dataclass
class DetConfig:
    d_det: int = 128
    n_heads: int = 4
    num_queries: int = 10
    enc_layers: int = 1
    fusion_layers: int = 1
    dec_layers: int = 2
    image_size: int = 64
    stride: int = 4          # feature grid = image_size / stride
    window: int = 16         # patch-embedding window, centered on each grid cell
    max_text: int = 32
    d_model: int = 128       # LM hidden size feeding the bridge
    vocab_size: int = 0
    anchor_size: float = 0.3
    # "live": use the LM's h_det; "constant": a learned vector replaces it (detector-only baseline)
    hdet_mode: str = "live"
    preset: str = "B"

    @classmethod
    def from_preset(cls, name: str, **overrides) -> "DetConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown capacity preset {name!r} (choose from {sorted(PRESETS)})")
        return cls(**{**PRESETS[name], "preset": name, **overrides})

    @property
    def grid(self) -> int:
        return self.image_size // self.stride

    @property
    def n_features(self) -> int:
        return self.grid ** 2

    def validate(self) -> "DetConfig":
        if self.d_det % self.n_heads:
            raise ValueError("d_det must be divisible by n_heads")
        if self.num_queries > self.n_features:
            raise ValueError(f"num_queries={self.num_queries} exceeds {self.n_features} image features")
        if self.hdet_mode not in ("live", "constant"):
            raise ValueError(f"hdet_mode must be 'live' or 'constant', got {self.hdet_mode!r}")
        if self.vocab_size <= 0:
            raise ValueError("vocab_size must be set")
        return self

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EncodedPair:
    f_img: Tensor            # (G*G, d)
    f_txt: Tensor            # (T, d)
    img_pos: Tensor          # (G*G, d) fixed positional encoding
    centers: np.ndarray      # (G*G, 2) normalized (x, y) of each cell


@dataclass
class QuerySelection:
    f_img: Tensor            # h_det-activated image map
    queries: Tensor          # (k, d)
    query_pos: Tensor        # (k, d)
    reference: np.ndarray    # (k, 2) cell centers of the selected features
    indices: np.ndarray      # (k,)
    relevance: np.ndarray    # (G*G,)
    h_proj: Tensor           # (n_det, d)
    scores: Tensor | None = None   # (G*G,) differentiable relevance logits


@dataclass
class DetPrediction:
    boxes: Tensor            # (k, 4) center format, in (0, 1)
    logits: Tensor           # (k,)
    selected: int
    pred: Box
    indices: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def to_json(self) -> str:
        return json.dumps({"boxes": self.boxes.data.astype(float).round(6).tolist(),
                           "logits": self.logits.data.astype(float).round(6).tolist(),
                           "selected": int(self.selected), "pred": [round(v, 6) for v in self.pred.tolist()]})


class InvalidQuery(ValueError):
    pass


def sine_encoding(xy: np.ndarray, d: int, temperature: float = 20.0) -> np.ndarray:
    """(N, 2) normalized coords -> (N, d): d/4 frequencies of sin/cos per axis."""
    n_freq = d // 4
    freqs = temperature ** (np.arange(n_freq) / max(n_freq, 1)) * math.pi
    parts = []
    for axis in range(2):
        ang = xy[:, axis:axis + 1] * freqs[None, :]
        parts += [np.sin(ang), np.cos(ang)]
    enc = np.concatenate(parts, axis=1)
    if enc.shape[1] < d:
        enc = np.pad(enc, ((0, 0), (0, d - enc.shape[1])))
    return enc


def extract_windows(img: np.ndarray, window: int, stride: int) -> np.ndarray:
    """(H, W, C) -> (G*G, window*window*C), one window centered on each stride cell."""
    h, w, c = img.shape
    pad = (window - stride) // 2
    padded = np.pad(img, ((pad, window - stride - pad), (pad, window - stride - pad), (0, 0)))
    g_h, g_w = h // stride, w // stride
    s0, s1, s2 = padded.strides
    view = np.lib.stride_tricks.as_strided(
        padded, (g_h, g_w, window, window, c), (s0 * stride, s1 * stride, s0, s1, s2), writeable=False)
    return view.reshape(g_h * g_w, window * window * c).copy()


def topk_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, ties broken toward the lower index."""
    if k > scores.shape[0]:
        raise InvalidQuery(f"k={k} exceeds the {scores.shape[0]} available features")
    order = np.lexsort((np.arange(scores.shape[0]), -scores))
    return order[:k]


def _inverse_sigmoid(p: np.ndarray) -> np.ndarray:
    p = np.clip(p, 1e-4, 1 - 1e-4)
    return np.log(p / (1 - p))


class FusionLayer(nn.Module):
    """Bidirectional image <-> text cross-attention, both updates from the same inputs."""

    def __init__(self, d: int, n_heads: int, rng: Rng, dtype):
        self.ln_img = nn.LayerNorm(d, dtype)
        self.ln_txt = nn.LayerNorm(d, dtype)
        self.i2t = nn.Attention(d, n_heads, rng, dtype=dtype)
        self.t2i = nn.Attention(d, n_heads, rng, dtype=dtype)
        self.ln_mlp = nn.LayerNorm(d, dtype)
        self.mlp = nn.MLP([d, 2 * d, d], rng, dtype)

    def __call__(self, img: Tensor, txt: Tensor, img_pos: Tensor):
        a, b = self.ln_img(img), self.ln_txt(txt)
        img_new = img + self.i2t(a + img_pos, b, b)
        txt_new = txt + self.t2i(b, a + img_pos, a)
        img_new = img_new + self.mlp(self.ln_mlp(img_new))
        return img_new, txt_new


class DecoderLayer(nn.Module):
    def __init__(self, d: int, n_heads: int, rng: Rng, dtype):
        self.ln_self = nn.LayerNorm(d, dtype)
        self.self_attn = nn.Attention(d, n_heads, rng, dtype=dtype)
        self.ln_img = nn.LayerNorm(d, dtype)
        self.img_attn = nn.Attention(d, n_heads, rng, dtype=dtype)
        self.ln_txt = nn.LayerNorm(d, dtype)
        self.txt_attn = nn.Attention(d, n_heads, rng, dtype=dtype)
        self.ln_mlp = nn.LayerNorm(d, dtype)
        self.mlp = nn.MLP([d, 4 * d, d], rng, dtype)

    def __call__(self, q, q_pos, f_img, img_pos, text_kv):
        x = self.ln_self(q)
        q = q + self.self_attn(x + q_pos, x + q_pos, x)
        x = self.ln_img(q)
        q = q + self.img_attn(x + q_pos, f_img + img_pos, f_img)
        x = self.ln_txt(q)
        q = q + self.txt_attn(x, text_kv, text_kv)
        return q + self.mlp(self.ln_mlp(q))


class Detector(nn.Module):
    def __init__(self, cfg: DetConfig, rng: Rng, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        d = cfg.d_det
        # encoder
        self.patch_embed = nn.Linear(cfg.window * cfg.window * 3, d, rng, dtype=dtype)
        self.img_blocks = [nn.Block(d, cfg.n_heads, rng, dtype=dtype) for _ in range(cfg.enc_layers)]
        self.tok_emb = nn.Embedding(cfg.vocab_size, d, rng, dtype=dtype)
        self.txt_pos = nn.param(rng.normal((cfg.max_text, d), 0.02, dtype))
        self.txt_blocks = [nn.Block(d, cfg.n_heads, rng, dtype=dtype) for _ in range(cfg.enc_layers)]
        self.fusion = [FusionLayer(d, cfg.n_heads, rng, dtype) for _ in range(cfg.fusion_layers)]
        self.ln_img_out = nn.LayerNorm(d, dtype)
        self.ln_txt_out = nn.LayerNorm(d, dtype)
        # MQS
        self.bridge = nn.MLP([cfg.d_model, d, d], rng, dtype)
        self.hdet_const = nn.param(rng.normal((1, cfg.d_model), 0.02, dtype)) if cfg.hdet_mode == "constant" else None
        self.ln_mqs = nn.LayerNorm(d, dtype)
        self.mqs_attn = nn.Attention(d, cfg.n_heads, rng, dtype=dtype)
        self.sel_bias = nn.param(np.zeros(1, dtype))
        # decoder
        self.layers = [DecoderLayer(d, cfg.n_heads, rng, dtype) for _ in range(cfg.dec_layers)]
        self.ln_dec = nn.LayerNorm(d, dtype)
        self.box_head = nn.MLP([d, d, d, 4], rng, dtype)
        last = self.box_head.layers[-1]
        last.weight.data[:] = 0.0
        self.cls_proj = nn.Linear(d, d, rng, dtype=dtype)
        self.cls_bias = nn.param(np.zeros(1, dtype))

        g = cfg.grid
        ys, xs = np.mgrid[0:g, 0:g]
        self.centers = np.stack([(xs.ravel() + 0.5) / g, (ys.ravel() + 0.5) / g], axis=1)
        self._pos = sine_encoding(self.centers, d).astype(dtype)

    @property
    def dtype(self):
        return self.cls_bias.dtype

    def cast(self, dtype):
        super().cast(dtype)
        self._pos = self._pos.astype(dtype)
        return self

    # -- encoder -------------------------------------------------------------
    def encode_pair(self, image: np.ndarray, text_ids) -> EncodedPair:
        text_ids = np.asarray(text_ids, dtype=np.int64)
        if text_ids.size == 0:
            raise ValueError("detector text is empty")
        text_ids = text_ids[: self.cfg.max_text]
        pixels = image_to_float(image) if np.asarray(image).dtype == np.uint8 else np.asarray(image)
        windows = extract_windows(pixels.astype(self.dtype), self.cfg.window, self.cfg.stride)
        pos = Tensor(self._pos)
        img = self.patch_embed(Tensor(windows)) + pos
        for blk in self.img_blocks:
            img = blk(img)
        txt = self.tok_emb(text_ids) + self.txt_pos[: len(text_ids)]
        for blk in self.txt_blocks:
            txt = blk(txt)
        for layer in self.fusion:
            img, txt = layer(img, txt, pos)
        return EncodedPair(self.ln_img_out(img), self.ln_txt_out(txt), pos, self.centers)

    # -- MQS -----------------------------------------------------------------
    def project_hdet(self, h_det: Tensor | None) -> Tensor:
        if self.cfg.hdet_mode == "constant" or h_det is None:
            if self.hdet_const is None:
                raise ValueError("detector needs an h_det input")
            h_det = self.hdet_const
        return self.bridge(h_det)

    def mqs_select(self, h_det: Tensor | None, enc: EncodedPair, k: int | None = None) -> QuerySelection:
        k = self.cfg.num_queries if k is None else k
        h = self.project_hdet(h_det)
        f_img = enc.f_img + self.mqs_attn(self.ln_mqs(enc.f_img), h, h)
        sim = T.matmul(f_img, enc.f_txt.transpose(1, 0)) * (1.0 / math.sqrt(self.cfg.d_det))
        scores = T.amax(sim, axis=-1) + self.sel_bias
        relevance = scores.data.copy()
        idx = topk_indices(relevance, k)
        return QuerySelection(f_img, T.gather(f_img, idx), T.gather(enc.img_pos, idx),
                              enc.centers[idx], idx, relevance, h, scores)

    # -- decoder -------------------------------------------------------------
    def det_decode(self, sel: QuerySelection, enc: EncodedPair, zero_hdet_slot: bool = False) -> DetPrediction:
        h = sel.h_proj * 0.0 if zero_hdet_slot else sel.h_proj
        text_kv = T.concat([enc.f_txt, h], axis=0)
        q = sel.queries
        for layer in self.layers:
            q = layer(q, sel.query_pos, sel.f_img, enc.img_pos, text_kv)
        q = self.ln_dec(q)
        k = q.shape[0]
        ref = np.concatenate([sel.reference, np.full((k, 2), self.cfg.anchor_size)], axis=1)
        boxes = T.sigmoid(self.box_head(q) + _inverse_sigmoid(ref).astype(self.dtype))
        sim = T.matmul(self.cls_proj(q), enc.f_txt.transpose(1, 0)) * (1.0 / math.sqrt(self.cfg.d_det))
        logits = T.amax(sim, axis=-1) + self.cls_bias
        sel_idx = int(np.argmax(logits.data))
        pred = Box(*map(float, boxes.data[sel_idx]))
        return DetPrediction(boxes, logits, sel_idx, pred, sel.indices)

    def forward(self, image, text_ids, h_det: Tensor | None, zero_hdet_slot: bool = False):
        enc = self.encode_pair(image, text_ids)
        sel = self.mqs_select(h_det, enc)
        return self.det_decode(sel, enc, zero_hdet_slot), sel, enc

    __call__ = forward


def with_mode(cfg: DetConfig, mode: str) -> DetConfig:
    return replace(cfg, hdet_mode=mode)
