"""Network building blocks: linear maps, layer norm, attention, transformer
encoder layers, temporal pooling and positional encodings.

Everything here composes the kernels in :mod:`mmretrieval.autograd`, so
gradients come from the tape. Parameters are plain ``Tensor`` objects with
``requires_grad=True``; modules are immutable during inference and safe for
concurrent batched encoding (training updates are single-writer).
"""

from __future__ import annotations

import math

import numpy as np

from . import autograd as ag
from .autograd import ShapeError, Tensor

SQRT2 = math.sqrt(2.0)


class Module:
    """Minimal parameter container with recursive named traversal."""

    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params: dict[str, Tensor] = {}
        for name, value in vars(self).items():
            key = f"{prefix}{name}" if not prefix else f"{prefix}.{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                params[key] = value
            elif isinstance(value, Module):
                params.update(value.named_parameters(key))
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        params.update(item.named_parameters(f"{key}.{i}"))
                    elif isinstance(item, Tensor) and item.requires_grad:
                        params[f"{key}.{i}"] = item
        return params

    def parameters(self) -> list[Tensor]:
        return list(self.named_parameters().values())

    def astype(self, dtype) -> "Module":
        """In-place dtype cast of all parameters (float64 for grad checks)."""
        for p in self.named_parameters().values():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def zero_grad(self) -> None:
        for p in self.named_parameters().values():
            p.grad = None

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.named_parameters()
        missing = set(params) ^ set(state)
        if missing:
            raise KeyError(f"parameter name mismatch on load: {sorted(missing)}")
        for name, arr in state.items():
            if params[name].data.shape != arr.shape:
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} != {params[name].data.shape}")
            params[name].data = arr.astype(params[name].data.dtype, copy=True)
            params[name].grad = None

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.named_parameters().items()}


class Linear(Module):
    def __init__(self, in_dim: int, out_dim: int, rng: np.random.Generator,
                 bias: bool = True, dtype=np.float32):
        bound = math.sqrt(6.0 / (in_dim + out_dim))
        self.weight = Tensor(rng.uniform(-bound, bound, (in_dim, out_dim)).astype(dtype),
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_dim, dtype=dtype), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        out = ag.matmul(x, self.weight)
        if self.bias is not None:
            out = out + self.bias
        return out


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-5, dtype=np.float32):
        self.gain = Tensor(np.ones(dim, dtype=dtype), requires_grad=True)
        self.shift = Tensor(np.zeros(dim, dtype=dtype), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        mu = x.mean(axis=-1, keepdims=True)
        centered = x - mu
        var = (centered * centered).mean(axis=-1, keepdims=True)
        normed = centered / ag.sqrt(var + self.eps)
        return normed * self.gain + self.shift


def gelu(x: Tensor) -> Tensor:
    """Exact (erf-based) GELU."""
    return x * 0.5 * (1.0 + ag.erf(x / SQRT2))


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor,
                         mask: np.ndarray | None = None) -> Tensor:
    """softmax(q k^T / sqrt(C)) v with optional key-position mask.

    ``q``: (..., Lq, C), ``k``: (..., Lk, C), ``v``: (..., Lk, Cv). ``mask``
    marks valid key positions (1 = attend) and must broadcast to the logits'
    trailing Lk axis; masked positions receive attention weight exactly 0.
    """
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"query/key feature dims differ: {q.shape} vs {k.shape}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"key/value lengths differ: {k.shape} vs {v.shape}")
    if mask is not None:
        mask = np.asarray(mask)
        if mask.shape[-1] != k.shape[-2]:
            raise ShapeError(f"mask length {mask.shape[-1]} != key length {k.shape[-2]}")
        if mask.ndim == q.ndim - 1:
            mask = mask[..., None, :]  # shared across query positions
    scale = 1.0 / math.sqrt(q.shape[-1])
    logits = ag.matmul(q, k.swap_axes(-1, -2)) * scale
    weights = ag.softmax(logits, axis=-1, mask=mask)
    return ag.matmul(weights, v)


class MultiHeadSelfAttention(Module):
    def __init__(self, dim: int, heads: int, rng: np.random.Generator, dtype=np.float32):
        if dim % heads != 0:
            raise ShapeError(f"head count {heads} must divide feature dim {dim}")
        self.heads = heads
        self.q_proj = Linear(dim, dim, rng, dtype=dtype)
        self.k_proj = Linear(dim, dim, rng, dtype=dtype)
        self.v_proj = Linear(dim, dim, rng, dtype=dtype)
        self.out_proj = Linear(dim, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        *lead, length, dim = x.shape
        head_dim = dim // self.heads

        def split_heads(t: Tensor) -> Tensor:
            t = t.reshape(tuple(lead) + (length, self.heads, head_dim))
            return t.swap_axes(-2, -3)  # (..., heads, L, head_dim)

        q, k, v = split_heads(self.q_proj(x)), split_heads(self.k_proj(x)), split_heads(self.v_proj(x))
        if mask is not None:
            mask = np.asarray(mask)
            # (..., L) key mask -> broadcast over heads and query positions
            mask = mask[..., None, None, :]
        attended = scaled_dot_attention(q, k, v, mask=mask)
        merged = attended.swap_axes(-2, -3).reshape(tuple(lead) + (length, dim))
        return self.out_proj(merged)


class FeedForward(Module):
    def __init__(self, dim: int, hidden: int, rng: np.random.Generator, dtype=np.float32):
        self.fc1 = Linear(dim, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, dim, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


class TransformerLayer(Module):
    """Post-norm encoder layer: MHSA + residual + LN, MLP + residual + LN."""

    def __init__(self, dim: int, heads: int = 4, mlp_ratio: int = 4,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.attn = MultiHeadSelfAttention(dim, heads, rng, dtype=dtype)
        self.norm1 = LayerNorm(dim, dtype=dtype)
        self.mlp = FeedForward(dim, mlp_ratio * dim, rng, dtype=dtype)
        self.norm2 = LayerNorm(dim, dtype=dtype)

    def __call__(self, x: Tensor, mask: np.ndarray | None = None) -> Tensor:
        if x.shape[-2] < 1:
            raise ShapeError("transformer layer needs at least one token")
        h = self.norm1(x + self.attn(x, mask=mask))
        return self.norm2(h + self.mlp(h))


def sinusoidal_positional_encoding(length: int, dim: int, dtype=np.float32) -> np.ndarray:
    """Standard sin/cos position table of shape (length, dim)."""
    position = np.arange(length, dtype=np.float64)[:, None]
    half = (dim + 1) // 2
    freq = np.exp(-math.log(10000.0) * np.arange(half, dtype=np.float64) / max(half, 1))
    angles = position * freq[None, :]
    table = np.zeros((length, dim), dtype=np.float64)
    table[:, 0::2] = np.sin(angles)[:, : (dim + 1) // 2]
    table[:, 1::2] = np.cos(angles)[:, : dim // 2]
    return table.astype(dtype)


def avg_pool_time(x: Tensor, stride: int = 2) -> Tensor:
    """Mean-pool the second-to-last (time) axis with window == stride.

    Output length is ceil(L / stride); a trailing partial window is averaged
    on its own rather than dropped.
    """
    *lead, length, dim = x.shape
    if length < 1:
        raise ShapeError("avg_pool_time needs at least one step")
    full = length // stride
    pieces = []
    if full > 0:
        head = x[..., : full * stride, :]
        head = head.reshape(tuple(lead) + (full, stride, dim))
        pieces.append(head.mean(axis=-2))
    if length % stride:
        tail = x[..., full * stride :, :]
        pieces.append(tail.mean(axis=-2, keepdims=True))
    if len(pieces) == 1:
        return pieces[0]
    return ag.concatenate(pieces, axis=-2)


def pooled_length(length: int, stages: int, stride: int = 2) -> int:
    for _ in range(stages):
        length = -(-length // stride)
    return length


def l2_normalize(x: Tensor, axis: int = -1, eps: float = 1e-12) -> Tensor:
    norm = ag.sqrt((x * x).sum(axis=axis, keepdims=True) + eps)
    return x / norm
