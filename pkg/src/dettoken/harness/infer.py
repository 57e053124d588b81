from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .. import textproto as tp
from ..geometry import Box
from ..synthworld import SHAPES, read_ppm, write_ppm
from .system import System

BOX_COLOR = (255, 255, 255)


def prompt_words(prompt: str) -> list[str]:
    words = prompt.split()
    if tp.IMAGE not in words:
        words = [tp.IMAGE] + words
    return [tp.BOS, tp.USER, *words, tp.ASSISTANT]


def detector_text(prompt: str, categories=SHAPES) -> str:
    kind, slot = tp.parse_prompt(prompt)
    if kind == "od":
        return tp.od_detector_text(categories)
    return slot


def draw_box(img: np.ndarray, box: Box, color=BOX_COLOR) -> np.ndarray:
    """1-px rectangle along the box corners (clipped to the image)."""
    out = img.copy()
    h, w = img.shape[:2]
    x0, y0, x1, y1 = box.clamped().corners()
    c0 = int(np.clip(np.floor(x0 * w), 0, w - 1))
    c1 = int(np.clip(np.ceil(x1 * w) - 1, 0, w - 1))
    r0 = int(np.clip(np.floor(y0 * h), 0, h - 1))
    r1 = int(np.clip(np.ceil(y1 * h) - 1, 0, h - 1))
    out[r0, c0:c1 + 1] = color
    out[r1, c0:c1 + 1] = color
    out[r0:r1 + 1, c0] = color
    out[r0:r1 + 1, c1] = color
    return out


def infer(system: System, image: np.ndarray, prompt: str) -> dict:
    ids = [system.vocab[w] for w in prompt_words(prompt)]
    res = system.infer_prompt(image, ids, detector_text(prompt))
    pred = res.prediction
    return {
        "answer_text": res.answer_text,
        "box": None if pred is None else [round(v, 6) for v in pred.pred.tolist()],
        "logits": None if pred is None else [round(float(v), 6) for v in pred.logits.data],
        "truncated": res.truncated,
    }


def infer_to_files(ckpt, image_path, prompt: str, out_dir) -> dict:
    system = System.load(ckpt)
    image = read_ppm(image_path)
    result = infer(system, image, prompt)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "result.json").write_text(json.dumps(result, indent=2, sort_keys=True) + "\n")
    annotated = draw_box(image, Box(*result["box"])) if result["box"] is not None else image
    write_ppm(out / "annotated.ppm", annotated)
    return result
