"""Independent reference computations used by the tests (brute force, rasterization)."""
from __future__ import annotations

import itertools

import numpy as np


def raster_counts(a_corners, b_corners, res=1e-3, frame=(0.0, 0.0, 1.0, 1.0)):
    """Cell-count areas of A, B, A&B and the enclosing box on a grid of pitch ``res``.

    A rectangle's indicator is the product of two 1-D indicators, so each 2-D count is
    the product of per-axis counts of cell centers.
    """
    x = np.arange(frame[0] + res / 2, frame[2], res)
    y = np.arange(frame[1] + res / 2, frame[3], res)

    def inside(c):
        return ((x >= c[0]) & (x < c[2])), ((y >= c[1]) & (y < c[3]))

    ax, ay = inside(a_corners)
    bx, by = inside(b_corners)
    enc = (min(a_corners[0], b_corners[0]), min(a_corners[1], b_corners[1]),
           max(a_corners[2], b_corners[2]), max(a_corners[3], b_corners[3]))
    ex, ey = inside(enc)
    area_a = ax.sum() * ay.sum()
    area_b = bx.sum() * by.sum()
    inter = (ax & bx).sum() * (ay & by).sum()
    encl = ex.sum() * ey.sum()
    return area_a, area_b, inter, encl


def raster_iou_giou(a_corners, b_corners, res=1e-3, frame=(0.0, 0.0, 1.0, 1.0)):
    area_a, area_b, inter, encl = raster_counts(a_corners, b_corners, res, frame)
    union = area_a + area_b - inter
    return inter / union, inter / union - (encl - union) / encl


def brute_force_assignment(cost):
    """Minimum-cost injective map rows -> columns by enumerating all injections."""
    cost = np.asarray(cost)
    m, k = cost.shape
    best, best_cols = None, None
    for cols in itertools.permutations(range(k), m):
        c = sum(cost[i, j] for i, j in enumerate(cols))
        if best is None or c < best - 1e-12:
            best, best_cols = c, cols
    return best, best_cols


def scan_mask_box(mask):
    """Exhaustive cell scan for the extreme foreground rows/cols, as corners."""
    H, W = len(mask), len(mask[0])
    rmin = cmin = None
    rmax = cmax = None
    for r in range(H):
        for c in range(W):
            if mask[r][c]:
                rmin = r if rmin is None else min(rmin, r)
                rmax = r if rmax is None else max(rmax, r)
                cmin = c if cmin is None else min(cmin, c)
                cmax = c if cmax is None else max(cmax, c)
    return (cmin / W, rmin / H, (cmax + 1) / W, (rmax + 1) / H)
