"""Central finite differences, used as the independent oracle for backward()."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Graph, Tensor, backward


def finite_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """(f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate i of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = float(f(x))
        flat[i] = old - h
        fm = float(f(x))
        flat[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"f is not finite at probe coordinate {np.unravel_index(i, x.shape)}")
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-8) -> float:
    """Max-norm relative error ||a - b|| / max(||a||, ||b||, floor)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = max(np.abs(a).max(initial=0.0), np.abs(b).max(initial=0.0), floor)
    return float(np.abs(a - b).max(initial=0.0) / scale)


@dataclass
class GradCheckResult:
    name: str
    rel_err: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.rel_err <= self.tol

    def line(self) -> str:
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name:<40s} rel_err={self.rel_err:.2e} (tol {self.tol:g})"


def check_grad(name: str, fn: Callable[..., Tensor], inputs: Sequence[Tensor],
               h: float = 1e-5, tol: float = 1e-4) -> GradCheckResult:
    """Compare backward() against finite differences for every input tensor.

    ``fn(*inputs)`` must build a scalar loss from the given (float64, requires_grad)
    tensors. The worst relative error over all inputs is reported.
    """
    for t in inputs:
        t.zero_grad()
    with Graph() as g:
        loss = fn(*inputs)
    analytic = backward(g, loss, wrt=inputs)
    worst = 0.0
    for t in inputs:
        saved = t.data.copy()

        def f(x, t=t):
            t.data = x
            return fn(*inputs).item()
        numeric = finite_diff_grad(f, saved, h)
        t.data = saved
        worst = max(worst, rel_error(analytic[t], numeric, floor=1e-6))
    return GradCheckResult(name, worst, tol)
