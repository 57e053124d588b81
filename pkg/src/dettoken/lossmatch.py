"""Query <-> ground-truth assignment, the detection loss and the total loss."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .diffcore import tensor as T
from .diffcore.tensor import Tensor
from .geometry import giou_tensor, pairwise_giou


@dataclass
class LossWeights:
    tok: float = 1.0
    det: float = 1.0
    l1: float = 5.0
    giou: float = 2.0
    contrast: float = 1.0
    select: float = 1.0      # supervision of the top-k relevance scores

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v < 0:
                raise ValueError(f"loss weight {k} must be >= 0, got {v}")


@dataclass
class Matching:
    pairs: list[tuple[int, int]]      # (gt index, query index), sorted by gt
    cost: float
    breakdown: np.ndarray             # (m, 3): l1, 1 - giou, -logit for each matched pair

    def query_of(self) -> dict[int, int]:
        return dict(self.pairs)


class MatchError(ValueError):
    pass


def _solve(cost: np.ndarray) -> tuple[float, list[int]]:
    """Shortest-augmenting-path Hungarian for m <= k. Returns (total, column per row)."""
    m, k = cost.shape
    INF = float("inf")
    u = [0.0] * (m + 1)
    v = [0.0] * (k + 1)
    p = [0] * (k + 1)       # p[j]: row (1-based) assigned to column j
    way = [0] * (k + 1)
    c = cost.tolist()
    for i in range(1, m + 1):
        p[0] = i
        j0 = 0
        minv = [INF] * (k + 1)
        used = [False] * (k + 1)
        while True:
            used[j0] = True
            i0 = p[j0]
            delta, j1 = INF, 0
            row = c[i0 - 1]
            ui0 = u[i0]
            for j in range(1, k + 1):
                if not used[j]:
                    cur = row[j - 1] - ui0 - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta, j1 = minv[j], j
            for j in range(k + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    cols = [0] * m
    for j in range(1, k + 1):
        if p[j]:
            cols[p[j] - 1] = j - 1
    return float(sum(cost[i, cols[i]] for i in range(m))), cols


def hungarian_match(cost) -> tuple[float, list[tuple[int, int]]]:
    """Minimum-cost injective assignment of rows (ground truths) to columns (queries).

    Among optimal assignments the one whose column sequence (in row order) is
    lexicographically smallest is returned.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.ndim != 2:
        raise MatchError("cost must be a 2-D matrix")
    m, k = cost.shape
    if m > k:
        raise MatchError(f"{m} ground truths cannot be matched injectively to {k} queries")
    if not np.all(np.isfinite(cost)):
        raise MatchError("cost matrix has non-finite entries")
    if m == 0:
        return 0.0, []
    if m == 1:
        j = int(np.argmin(cost[0]))
        return float(cost[0, j]), [(0, j)]
    best, _ = _solve(cost)
    tol = 1e-9 * max(1.0, abs(best))
    fixed: list[int] = []
    fixed_cost = 0.0
    for i in range(m):
        rest_rows = list(range(i + 1, m))
        for j in range(k):
            if j in fixed:
                continue
            free_cols = [c for c in range(k) if c not in fixed and c != j]
            rest = _solve(cost[np.ix_(rest_rows, free_cols)])[0] if rest_rows else 0.0
            if fixed_cost + cost[i, j] + rest <= best + tol:
                fixed.append(j)
                fixed_cost += cost[i, j]
                break
    return best, list(enumerate(fixed))


def match_cost(boxes: np.ndarray, logits: np.ndarray, gts: np.ndarray, w: LossWeights) -> np.ndarray:
    """(m, k, 3) per-pair terms: L1, 1 - GIoU, -logit."""
    l1 = np.abs(gts[:, None, :] - boxes[None, :, :]).sum(-1)
    g = 1.0 - pairwise_giou(gts, boxes)
    cls = np.broadcast_to(-logits[None, :], l1.shape)
    return np.stack([l1, g, cls], axis=-1)


def match(boxes: np.ndarray, logits: np.ndarray, gts: np.ndarray, w: LossWeights) -> Matching:
    terms = match_cost(boxes.astype(np.float64), logits.astype(np.float64), gts, w)
    total = terms @ np.array([w.l1, w.giou, w.contrast])
    cost, pairs = hungarian_match(total)
    return Matching(pairs, cost, np.array([terms[i, j] for i, j in pairs]).reshape(-1, 3))


@dataclass
class DetLossParts:
    total: Tensor
    l1: float
    giou: float
    contrast: float
    matching: Matching
    select: float = 0.0


def sigmoid_focal(logits: Tensor, targets: np.ndarray, alpha: float = 0.25, gamma: float = 2.0) -> Tensor:
    ce = T.bce_with_logits(logits, targets)
    targets = targets.astype(logits.dtype)
    p = T.sigmoid(logits)
    one_minus_pt = p * (1.0 - 2.0 * targets) + targets      # 1 - p_t
    mod = T.exp(T.log(one_minus_pt + 1e-12) * gamma)
    weight = (alpha * targets + (1 - alpha) * (1 - targets)).astype(logits.dtype)
    return ce * mod * weight


def cell_targets(centers: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """1 for feature cells whose center falls inside some ground-truth box; the cell nearest
    each box center is always positive so tiny boxes still get one."""
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    x, y = centers[:, :1], centers[:, 1:]
    inside = ((np.abs(x - gts[None, :, 0]) < gts[None, :, 2] / 2)
              & (np.abs(y - gts[None, :, 1]) < gts[None, :, 3] / 2)).any(axis=1)
    for g in gts:
        inside[np.argmin(((centers - g[:2]) ** 2).sum(1))] = True
    return inside


def selection_loss(scores: Tensor, centers: np.ndarray, gts) -> Tensor:
    """BCE of the query-selection scores against :func:`cell_targets`, mean over cells."""
    targets = cell_targets(centers, gts).astype(scores.dtype)
    return T.bce_with_logits(scores, targets).mean()


def detection_loss(boxes: Tensor, logits: Tensor, gts, w: LossWeights, focal: bool = False,
                   selection: tuple[Tensor, np.ndarray] | None = None) -> DetLossParts:
    """L1 + GIoU over matched pairs (mean over ground truths) plus per-query BCE on
    objectness (matched -> 1, others -> 0, mean over queries). ``selection`` is an optional
    (scores, cell centers) pair whose BCE is added with weight ``w.select``."""
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    if len(gts) == 0:
        raise MatchError("detection sample has no ground-truth boxes")
    m = len(gts)
    matching = match(boxes.data, logits.data, gts, w)
    q_idx = [j for _, j in matching.pairs]
    g_idx = [i for i, _ in matching.pairs]
    matched = T.gather(boxes, q_idx)
    gt_m = gts[g_idx].astype(boxes.dtype)
    l1 = T.tabs(matched - gt_m).sum() * (1.0 / m)
    giou = (1.0 - giou_tensor(matched, gt_m)).sum() * (1.0 / m)
    targets = np.zeros(logits.shape[0], dtype=logits.dtype)
    targets[q_idx] = 1.0
    cls_terms = sigmoid_focal(logits, targets) if focal else T.bce_with_logits(logits, targets)
    contrast = cls_terms.mean()
    total = l1 * w.l1 + giou * w.giou + contrast * w.contrast
    sel = 0.0
    if selection is not None and w.select != 0:
        sel_t = selection_loss(selection[0], selection[1], gts)
        total = total + sel_t * w.select
        sel = float(sel_t.data)
    return DetLossParts(total, float(l1.data), float(giou.data), float(contrast.data), matching, sel)


def total_loss(l_tok: Tensor, l_det: Tensor | None, w: LossWeights, has_det: bool) -> Tensor:
    """lambda_tok * L_tok + lambda_det * L_det; the detection term is dropped entirely for
    samples without boxes or when lambda_det is 0."""
    out = l_tok * w.tok
    if has_det and l_det is not None and w.det != 0:
        out = out + l_det * w.det
    return out
