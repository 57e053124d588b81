"""Small layer library on top of the tape: parameters, linear, norm, attention."""
from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .rng import Rng
from .tensor import Tensor


class Module:
    """Parameters are discovered from attributes in definition order, which keeps
    checkpoint names and optimizer state ordering deterministic."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for key, val in self.__dict__.items():
            name = f"{prefix}{key}"
            if isinstance(val, Tensor) and val.requires_grad:
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(name + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{name}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self, prefix: str = "") -> dict[str, np.ndarray]:
        return {n: p.data.copy() for n, p in self.named_parameters(prefix)}

    def load_state_dict(self, state: dict[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        for n, p in self.named_parameters(prefix):
            if n not in state:
                if strict:
                    raise KeyError(f"missing tensor {n!r} in checkpoint")
                continue
            arr = state[n]
            if arr.shape != p.shape:
                raise ValueError(f"shape mismatch for {n}: {arr.shape} vs {p.shape}")
            p.data = arr.astype(p.dtype)
            p.zero_grad()

    def cast(self, dtype) -> "Module":
        for _, p in self.named_parameters():
            p.data = p.data.astype(dtype)
            p.zero_grad()
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def num_params(self) -> int:
        return sum(p.data.size for p in self.parameters())


def param(data: np.ndarray) -> Tensor:
    return Tensor(data, requires_grad=True)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: Rng, bias: bool = True, std: float = 0.02,
                 dtype=np.float32):
        self.weight = param(rng.normal((d_in, d_out), std, dtype))
        self.bias = param(np.zeros(d_out, dtype)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = T.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, dtype=np.float32):
        self.gamma = param(np.ones(d, dtype))
        self.beta = param(np.zeros(d, dtype))

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta)


class Embedding(Module):
    def __init__(self, n: int, d: int, rng: Rng, std: float = 0.02, dtype=np.float32):
        self.weight = param(rng.normal((n, d), std, dtype))

    def __call__(self, ids) -> Tensor:
        return T.gather(self.weight, np.asarray(ids, dtype=np.int64), axis=0)


class MLP(Module):
    """Stack of Linear layers with GELU between them."""

    def __init__(self, dims: list[int], rng: Rng, dtype=np.float32):
        self.layers = [Linear(a, b, rng, dtype=dtype) for a, b in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.gelu(x)
        return x


class Attention(Module):
    """Multi-head attention on unbatched (N, d) inputs.

    ``mask`` is a boolean (Nq, Nk) array, True where attention is blocked.
    """

    def __init__(self, d: int, n_heads: int, rng: Rng, d_kv: int | None = None, dtype=np.float32):
        if d % n_heads:
            raise ValueError(f"d={d} not divisible by n_heads={n_heads}")
        d_kv = d_kv or d
        self.n_heads = n_heads
        self.q = Linear(d, d, rng, dtype=dtype)
        self.k = Linear(d_kv, d, rng, dtype=dtype)
        self.v = Linear(d_kv, d, rng, dtype=dtype)
        self.o = Linear(d, d, rng, dtype=dtype)

    def _heads(self, x: Tensor) -> Tensor:
        n, d = x.shape
        return x.reshape(n, self.n_heads, d // self.n_heads).transpose(1, 0, 2)

    def __call__(self, q_in: Tensor, k_in: Tensor, v_in: Tensor | None = None, mask=None) -> Tensor:
        v_in = k_in if v_in is None else v_in
        q = self._heads(self.q(q_in))
        k = self._heads(self.k(k_in))
        v = self._heads(self.v(v_in))
        scores = T.matmul(q, k.transpose(0, 2, 1)) * (1.0 / math.sqrt(q.shape[-1]))
        if mask is not None:
            scores = T.masked_fill(scores, mask[None], T.NEG_INF)
        ctx = T.matmul(T.softmax(scores, axis=-1), v)
        n = q_in.shape[0]
        return self.o(ctx.transpose(1, 0, 2).reshape(n, -1))


class Block(Module):
    """Pre-norm transformer block: x + attn(ln(x)); x + mlp(ln(x))."""

    def __init__(self, d: int, n_heads: int, rng: Rng, mlp_ratio: int = 4, dtype=np.float32):
        self.ln1 = LayerNorm(d, dtype)
        self.attn = Attention(d, n_heads, rng, dtype=dtype)
        self.ln2 = LayerNorm(d, dtype)
        self.mlp = MLP([d, mlp_ratio * d, d], rng, dtype)

    def __call__(self, x: Tensor, mask=None, pos: Tensor | None = None) -> Tensor:
        h = self.ln1(x)
        qk = h if pos is None else h + pos
        x = x + self.attn(qk, qk, h, mask)
        return x + self.mlp(self.ln2(x))
