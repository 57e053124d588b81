"""Boxes, IoU / GIoU, box regression losses and mask -> box conversion.

Boxes live in normalized center format (cx, cy, w, h). Corner format is
(x0, y0, x1, y1). Losses are computed on center-format tensors and convert to
corners internally; nothing is clamped during loss computation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .diffcore import tensor as T
from .diffcore.tensor import Tensor


class InvalidBox(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise InvalidBox(f"box needs positive extent, got w={self.w} h={self.h}")

    @classmethod
    def from_corners(cls, x0: float, y0: float, x1: float, y1: float) -> "Box":
        return cls((x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0)

    def corners(self) -> tuple[float, float, float, float]:
        return (self.cx - self.w / 2, self.cy - self.h / 2, self.cx + self.w / 2, self.cy + self.h / 2)

    def clamped(self) -> "Box":
        """Clip to the unit square, for rendering and reports only."""
        x0, y0, x1, y1 = (min(max(v, 0.0), 1.0) for v in self.corners())
        return Box.from_corners(x0, y0, max(x1, x0 + 1e-6), max(y1, y0 + 1e-6))

    def tolist(self) -> list[float]:
        return [float(self.cx), float(self.cy), float(self.w), float(self.h)]


@dataclass
class BoxSet:
    boxes: list[Box]
    labels: list[str] | None = None

    def __len__(self) -> int:
        return len(self.boxes)

    def array(self) -> np.ndarray:
        return np.array([b.tolist() for b in self.boxes], dtype=np.float64).reshape(-1, 4)


def as_box(b) -> Box:
    return b if isinstance(b, Box) else Box(*map(float, b))


def box_convert(b: Sequence[float], target: str) -> tuple[float, float, float, float]:
    """Convert a quadruple to ``target`` format ("corner" or "center")."""
    a, b_, c, d = map(float, b)
    if target == "corner":
        if not (c > 0 and d > 0):
            raise InvalidBox(f"non-positive extent ({c}, {d})")
        return (a - c / 2, b_ - d / 2, a + c / 2, b_ + d / 2)
    if target == "center":
        if not (c > a and d > b_):
            raise InvalidBox(f"corners do not span a positive area: {(a, b_, c, d)}")
        return ((a + c) / 2, (b_ + d) / 2, c - a, d - b_)
    raise ValueError(f"unknown box format {target!r}")


def _corners(arr: np.ndarray) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    half = arr[..., 2:] / 2
    return np.concatenate([arr[..., :2] - half, arr[..., :2] + half], axis=-1)


def _iou_parts(a: np.ndarray, b: np.ndarray):
    ca, cb = _corners(a), _corners(b)
    iw = np.maximum(0.0, np.minimum(ca[..., 2], cb[..., 2]) - np.maximum(ca[..., 0], cb[..., 0]))
    ih = np.maximum(0.0, np.minimum(ca[..., 3], cb[..., 3]) - np.maximum(ca[..., 1], cb[..., 1]))
    inter = iw * ih
    area_a = (ca[..., 2] - ca[..., 0]) * (ca[..., 3] - ca[..., 1])
    area_b = (cb[..., 2] - cb[..., 0]) * (cb[..., 3] - cb[..., 1])
    union = area_a + area_b - inter
    ew = np.maximum(ca[..., 2], cb[..., 2]) - np.minimum(ca[..., 0], cb[..., 0])
    eh = np.maximum(ca[..., 3], cb[..., 3]) - np.minimum(ca[..., 1], cb[..., 1])
    return inter, union, ew * eh


def iou(a, b) -> float:
    a, b = as_box(a), as_box(b)
    inter, union, _ = _iou_parts(np.array(a.tolist()), np.array(b.tolist()))
    return float(inter / union)


def giou(a, b) -> float:
    a, b = as_box(a), as_box(b)
    inter, union, encl = _iou_parts(np.array(a.tolist()), np.array(b.tolist()))
    if encl <= 0:
        raise InvalidBox("degenerate enclosing box")
    return float(inter / union - (encl - union) / encl)


def pairwise_iou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """(m, 4) x (n, 4) center boxes -> (m, n) IoU."""
    inter, union, _ = _iou_parts(np.asarray(a)[:, None, :], np.asarray(b)[None, :, :])
    return inter / union


def pairwise_giou(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter, union, encl = _iou_parts(np.asarray(a)[:, None, :], np.asarray(b)[None, :, :])
    return inter / union - (encl - union) / encl


# -- differentiable losses ----------------------------------------------------
def _tensor_corners(box: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    cx, cy, w, h = (box[..., i] for i in range(4))
    return cx - w * 0.5, cy - h * 0.5, cx + w * 0.5, cy + h * 0.5


def giou_tensor(pred: Tensor, gt) -> Tensor:
    """GIoU between center-format ``pred`` (..., 4) and constant ``gt`` (..., 4)."""
    gt = np.asarray(gt, dtype=pred.dtype)
    px0, py0, px1, py1 = _tensor_corners(pred)
    g = _corners(gt).astype(pred.dtype)
    gx0, gy0, gx1, gy1 = (Tensor(g[..., i]) for i in range(4))
    iw = T.relu(T.minimum(px1, gx1) - T.maximum(px0, gx0))
    ih = T.relu(T.minimum(py1, gy1) - T.maximum(py0, gy0))
    inter = iw * ih
    area_p = (px1 - px0) * (py1 - py0)
    area_g = Tensor((g[..., 2] - g[..., 0]) * (g[..., 3] - g[..., 1]))
    union = area_p + area_g - inter
    ew = T.maximum(px1, gx1) - T.minimum(px0, gx0)
    eh = T.maximum(py1, gy1) - T.minimum(py0, gy0)
    encl = ew * eh
    if np.any(encl.data <= 0):
        raise InvalidBox("degenerate enclosing box")
    return inter / union - (encl - union) / encl


def giou_loss(pred, gt) -> tuple[Tensor, Tensor]:
    """Returns (giou, 1 - giou). ``pred`` may be a Tensor (differentiable) or a box."""
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(as_box(pred).tolist(), dtype=np.float64))
    gt_arr = np.asarray(as_box(gt).tolist() if not isinstance(gt, np.ndarray) else gt, dtype=pred.dtype)
    g = giou_tensor(pred, gt_arr)
    return g, 1.0 - g


def l1_box_loss(pred, gt) -> Tensor:
    """Sum over (cx, cy, w, h) of absolute differences."""
    if not isinstance(pred, Tensor):
        pred = Tensor(np.asarray(as_box(pred).tolist(), dtype=np.float64))
    gt_arr = np.asarray(gt.tolist() if isinstance(gt, Box) else gt, dtype=pred.dtype)
    return T.tabs(pred - gt_arr).sum(axis=-1)


# -- masks --------------------------------------------------------------------
class EmptyMask(ValueError):
    pass


def mask_to_box(mask: np.ndarray) -> Box:
    """Tightest box covering every foreground cell, normalized by the grid extents.

    Cell (r, c) covers [c, c+1] x [r, r+1] in grid units.
    """
    mask = np.asarray(mask, dtype=bool)
    rows = np.flatnonzero(mask.any(axis=1))
    cols = np.flatnonzero(mask.any(axis=0))
    if rows.size == 0:
        raise EmptyMask("mask has no foreground cell: no instance")
    H, W = mask.shape
    return Box.from_corners(cols[0] / W, rows[0] / H, (cols[-1] + 1) / W, (rows[-1] + 1) / H)


def rasterize(box: Box, height: int, width: int) -> np.ndarray:
    """Cells whose centers fall inside ``box``."""
    x0, y0, x1, y1 = box.corners()
    ys = (np.arange(height) + 0.5) / height
    xs = (np.arange(width) + 0.5) / width
    return ((ys >= y0) & (ys <= y1))[:, None] & ((xs >= x0) & (xs <= x1))[None, :]


def best_iou(pred, gts: Iterable) -> float:
    return max((iou(pred, g) for g in gts), default=0.0)
