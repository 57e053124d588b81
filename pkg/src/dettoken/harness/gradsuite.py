"""Finite-difference checks over every primitive and a few composite micro-instances.

Everything runs in float64 with h = 1e-5. The composite cases use a detector with a
16x16 image (4x4 feature grid), k = 2 queries, 3 text tokens and width 8.
"""
from __future__ import annotations

from typing import Callable

import numpy as np

from .. import diffcore as dc
from ..detector import DetConfig, Detector, EncodedPair
from ..diffcore import GradCheckResult, Tensor, check_grad
from ..diffcore.rng import Rng
from ..geometry import giou_tensor, l1_box_loss
from ..lossmatch import LossWeights, detection_loss
from ..mllm import Mllm, MllmConfig, lm_loss

MODULES = ("diffcore", "geometry", "detector", "loss")
H = 1e-5
TOL = 1e-4

Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[Tensor]]]


def leaf(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _rand(rng, shape, away_from_zero=False):
    a = rng.normal(size=shape)
    if away_from_zero:
        a = np.where(np.abs(a) < 1e-2, 0.5, a)
    return a


def primitive_cases() -> dict[str, Case]:
    cases: dict[str, Case] = {}

    def two(shape_a, shape_b, op):
        def build(rng):
            a, b = _rand(rng, shape_a), _rand(rng, shape_b)
            if a.shape == b.shape:      # keep max/min probes away from ties
                b = np.where(np.abs(a - b) < 1e-3, b + 0.1, b)
            return op, [leaf(a), leaf(b)]
        return build

    def one(shape, op, away=False, positive=False):
        def build(rng):
            a = _rand(rng, shape, away)
            if positive:
                a = np.abs(a) + 0.5
            return op, [leaf(a)]
        return build

    cases["add"] = two((3, 4), (4,), lambda a, b: ((a + b) * (a + b)).sum())
    cases["sub"] = two((3, 4), (3, 4), lambda a, b: ((a - b) * a).sum())
    cases["mul"] = two((2, 3), (2, 3), lambda a, b: (a * b * a).sum())
    cases["div"] = two((2, 3), (2, 3), lambda a, b: (a / (b * b + 1.0)).sum())
    cases["neg"] = one((4,), lambda a: (-a * a).sum())
    cases["matmul"] = two((2, 3, 4), (2, 4, 5), lambda a, b: (dc.matmul(a, b) * dc.matmul(a, b)).sum())
    cases["matmul_shared_rhs"] = two((2, 3, 4), (4, 5), lambda a, b: dc.gelu(dc.matmul(a, b)).sum())
    cases["exp"] = one((5,), lambda a: dc.exp(a).sum())
    cases["log"] = one((5,), lambda a: (dc.log(a) * dc.log(a)).sum(), positive=True)
    cases["abs"] = one((6,), lambda a: (dc.tabs(a) * a).sum(), away=True)
    cases["relu"] = one((6,), lambda a: (dc.relu(a) * a).sum(), away=True)
    cases["gelu"] = one((6,), lambda a: (dc.gelu(a) * a).sum())
    cases["sigmoid"] = one((6,), lambda a: (dc.sigmoid(a) * a).sum())
    cases["softmax"] = one((3, 5), lambda a: (dc.softmax(a) * a).sum())
    cases["log_softmax"] = one((3, 5), lambda a: (dc.log_softmax(a) * a).sum())
    cases["transpose"] = one((2, 3, 4), lambda a: (dc.transpose(a, (2, 0, 1)) * np.arange(24.0).reshape(4, 2, 3)).sum())
    cases["reshape"] = one((2, 6), lambda a: (a.reshape(3, 4) * np.arange(12.0).reshape(3, 4)).sum())
    cases["slice"] = one((4, 5), lambda a: (a[1:3, ::2] * a[1:3, ::2]).sum())
    cases["gather"] = one((4, 3), lambda a: (dc.gather(a, [0, 2, 2, 3]) * np.arange(12.0).reshape(4, 3)).sum())
    cases["concat"] = two((2, 3), (1, 3), lambda a, b: (dc.concat([a, b, a]) * np.arange(15.0).reshape(5, 3)).sum())
    cases["masked_fill"] = one((3, 3), lambda a: (dc.softmax(dc.masked_fill(a, np.triu(np.ones((3, 3)), 1), -1e9)) * a).sum())
    cases["sum_mean"] = one((3, 4), lambda a: (a.sum(axis=0) * a.mean(axis=0)).sum())
    cases["max"] = one((4, 5), lambda a: (dc.amax(a, axis=-1) * np.arange(4.0)).sum())
    cases["maximum_minimum"] = two((6,), (6,), lambda a, b: (dc.maximum(a, b) * 2.0 + dc.minimum(a, b) * a).sum())

    def ln(rng):
        return (lambda x, g, b: (dc.layer_norm(x, g, b) * np.arange(12.0).reshape(3, 4)).sum(),
                [leaf(_rand(rng, (3, 4))), leaf(1 + 0.1 * _rand(rng, (4,))), leaf(_rand(rng, (4,)))])
    cases["layer_norm"] = ln

    def ce(rng):
        t = np.array([1, 0, 4])
        return (lambda a: (dc.cross_entropy(a, t) * np.array([1.0, 0.5, 2.0])).sum(), [leaf(_rand(rng, (3, 5)))])
    cases["cross_entropy"] = ce

    def bce(rng):
        t = np.array([1.0, 0.0, 1.0, 0.0])
        return (lambda a: dc.bce_with_logits(a, t).sum(), [leaf(3 * _rand(rng, (4,)))])
    cases["bce"] = bce
    return cases


def _random_boxes(rng, n):
    c = rng.uniform(0.3, 0.7, size=(n, 2))
    wh = rng.uniform(0.1, 0.5, size=(n, 2))
    return np.concatenate([c, wh], axis=1)


def geometry_cases() -> dict[str, Case]:
    def giou(rng):
        gt = _random_boxes(rng, 3)
        return (lambda p: (1.0 - giou_tensor(p, gt)).sum(), [leaf(_random_boxes(rng, 3))])

    def giou_disjoint(rng):
        gt = np.array([[0.2, 0.2, 0.1, 0.1], [0.8, 0.3, 0.2, 0.1]])
        pred = np.array([[0.7, 0.7, 0.15, 0.2], [0.2, 0.8, 0.1, 0.3]]) + 0.01 * rng.normal(size=(2, 4))
        return (lambda p: giou_tensor(p, gt).sum(), [leaf(pred)])

    def l1(rng):
        gt = _random_boxes(rng, 2)
        pred = gt + np.where(rng.random((2, 4)) < 0.5, -1, 1) * rng.uniform(0.05, 0.2, (2, 4))
        return (lambda p: l1_box_loss(p, gt).sum(), [leaf(pred)])
    return {"giou_loss": giou, "giou_disjoint": giou_disjoint, "l1_box_loss": l1}


# -- micro model instances -------------------------------------------------------
MICRO_VOCAB = 12


def micro_detector(seed: int = 0) -> Detector:
    cfg = DetConfig(d_det=8, n_heads=2, num_queries=2, enc_layers=1, fusion_layers=1, dec_layers=1,
                    image_size=16, stride=4, window=8, max_text=3, d_model=8, vocab_size=MICRO_VOCAB)
    det = Detector(cfg, Rng(seed, "micro-det"), np.float64)
    # the last box-head layer starts at zero; give it values so its gradient path is exercised
    rng = np.random.default_rng(seed)
    for p in det.box_head.parameters():
        p.data = rng.normal(scale=0.3, size=p.shape)
    return det


def micro_inputs(seed: int = 0):
    rng = np.random.default_rng(seed + 100)
    image = rng.uniform(-1, 1, size=(16, 16, 3))
    text = np.array([3, 5, 7])
    return image, text, rng.normal(size=(1, 8))


def _weights(rng, shape):
    return rng.normal(size=shape)


def detector_cases() -> dict[str, Case]:
    def encoder(rng):
        det = micro_detector()
        image, text, _ = micro_inputs()
        w_img, w_txt = _weights(rng, (16, 8)), _weights(rng, (3, 8))

        def f(*_):
            enc = det.encode_pair(image, text)
            return (enc.f_img * w_img).sum() + (enc.f_txt * w_txt).sum()
        return f, [det.patch_embed.weight, det.fusion[0].mlp.layers[0].weight, det.tok_emb.weight]

    def mqs(rng):
        det = micro_detector()
        image, text, h0 = micro_inputs()
        enc = det.encode_pair(image, text)
        f_img, f_txt, h = leaf(enc.f_img.data), leaf(enc.f_txt.data), leaf(h0)
        w_map, w_q = _weights(rng, (16, 8)), _weights(rng, (2, 8))

        def f(*_):
            sel = det.mqs_select(h, EncodedPair(f_img, f_txt, enc.img_pos, enc.centers), 2)
            return (sel.f_img * w_map).sum() + (sel.queries * w_q).sum()
        return f, [h, f_img, f_txt, det.bridge.layers[0].weight, det.mqs_attn.q.weight]

    def decode(rng):
        det = micro_detector()
        image, text, h0 = micro_inputs()
        h = leaf(h0)
        w_box, w_logit = _weights(rng, (2, 4)), _weights(rng, (2,))

        def f(*_):
            pred, _, _ = det(image, text, h)
            return (pred.boxes * w_box).sum() + (pred.logits * w_logit).sum()
        return f, [h, det.layers[0].txt_attn.v.weight, det.box_head.layers[-1].weight, det.cls_proj.weight]
    return {"encode_pair": encoder, "mqs_forward": mqs, "det_decode_k2": decode}


def micro_mllm(seed: int = 0) -> Mllm:
    cfg = MllmConfig(d_model=8, n_layers=1, n_heads=2, patch=8, image_size=16, max_text=8, vocab_size=MICRO_VOCAB)
    return Mllm(cfg, Rng(seed, "micro-mllm"), np.float64)


def loss_cases() -> dict[str, Case]:
    def det_loss(rng):
        gts = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.3, 0.2]])
        raw = np.array([[0.32, 0.28, 0.25, 0.18], [0.1, 0.9, 0.1, 0.1], [0.66, 0.62, 0.2, 0.3], [0.5, 0.5, 0.6, 0.6]])
        boxes = leaf(raw + 0.005 * rng.normal(size=raw.shape))
        logits = leaf(rng.normal(size=4))
        w = LossWeights()
        return (lambda b, lg: detection_loss(b, lg, gts, w).total, [boxes, logits])

    def det_loss_focal(rng):
        fn, inputs = det_loss(rng)
        gts = np.array([[0.3, 0.3, 0.2, 0.2], [0.7, 0.6, 0.3, 0.2]])
        return (lambda b, lg: detection_loss(b, lg, gts, LossWeights(), focal=True).total, inputs)

    def lm(rng):
        model = micro_mllm()
        image = rng.uniform(-1, 1, size=(16, 16, 3))
        ids = np.array([1, 5, 3, 8, 9, 4, 2])
        mask = np.array([0, 0, 0, 1, 1, 1, 1], dtype=np.float64)
        return (lambda *_: lm_loss(model(image, ids).logits, ids, mask),
                [model.tok_emb.weight, model.blocks[0].attn.q.weight, model.head.weight, model.img_pos])

    def hdet_path(rng):
        # gradient from the detection loss flows back into the LM through h_det
        model, det = micro_mllm(), micro_detector()
        image = rng.uniform(-1, 1, size=(16, 16, 3))
        ids = np.array([1, 5, 3, 6, 2])
        gts = np.array([[0.4, 0.5, 0.3, 0.3]])

        def f(*_):
            h = model(image, ids, [3]).h_det
            pred, sel, _ = det(image, np.array([3, 5, 7]), h)
            return detection_loss(pred.boxes, pred.logits, gts, LossWeights(), selection=(sel.scores, det.centers)).total
        return f, [model.blocks[0].mlp.layers[0].weight, model.tok_emb.weight]
    return {"detection_loss": det_loss, "detection_loss_focal": det_loss_focal, "lm_loss": lm,
            "h_det_backprop": hdet_path}


SUITES = {"diffcore": primitive_cases, "geometry": geometry_cases, "detector": detector_cases, "loss": loss_cases}


def run(module: str = "all", seeds=(0,), tol: float = TOL) -> list[GradCheckResult]:
    names = MODULES if module == "all" else (module,)
    if any(n not in SUITES for n in names):
        raise ValueError(f"unknown gradcheck module {module!r}")
    results = []
    for mod in names:
        for name, build in SUITES[mod]().items():
            for seed in seeds:
                fn, inputs = build(np.random.default_rng(seed))
                results.append(check_grad(f"{mod}/{name}[{seed}]", fn, inputs, h=H, tol=tol))
    return results
