"""Variable-length audio feature compression to a fixed token count.

Upstream speech features arrive with wildly varying lengths (long-tailed), so
the audio head condenses any (L_in, C_in) sequence into exactly (L_a, C)
tokens. The main path is memory-retrieval attention: the input is adaptively
mean-pooled into L_a chunks, a fully connected layer turns each chunk into a
query, and scaled dot attention against a bank of learnable key/value slots
produces the refined tokens; positional encoding is added afterwards and the
result is unit-normalized.

Two non-attention baselines (strided average pooling, strided 1-D
convolution) share the fixed-output contract for the compression ablation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import ShapeError, Tensor


class EmptyInputError(ValueError):
    pass


@dataclass
class AudioCompressorConfig:
    in_dim: int
    dim: int = 32
    out_len: int = 8          # L_a: compressed token count
    memory_slots: int = 32    # M
    heads: int = 4            # unused by baselines


def adaptive_chunk_bounds(length: int, chunks: int) -> list[tuple[int, int]]:
    """Chunk i covers [floor(i*L/n), ceil((i+1)*L/n)); never empty for L >= 1."""
    return [(int(np.floor(i * length / chunks)),
             int(np.ceil((i + 1) * length / chunks))) for i in range(chunks)]


def _chunk_means(feats: Tensor, out_len: int) -> Tensor:
    """(B, L, C) -> (B, out_len, C) adaptive mean pooling."""
    length = feats.shape[1]
    pieces = [feats[:, s:e, :].mean(axis=1, keepdims=True)
              for s, e in adaptive_chunk_bounds(length, out_len)]
    return ag.concatenate(pieces, axis=1)


def _validate(feats: Tensor, in_dim: int) -> None:
    if feats.ndim != 3:
        raise ShapeError(f"audio batch must be (B, L, C_in), got {feats.shape}")
    if feats.shape[1] < 1:
        raise EmptyInputError("audio input has zero frames")
    if feats.shape[-1] != in_dim:
        raise ShapeError(f"audio feature dim {feats.shape[-1]} != configured {in_dim}")


class MemoryCompressor(nn.Module):
    """Compression through attention over learnable memory key/value slots."""

    def __init__(self, config: AudioCompressorConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        if config.memory_slots < 1:
            raise ValueError("memory bank needs at least one slot")
        scale = 1.0 / np.sqrt(config.dim)
        self.memory_keys = Tensor((rng.standard_normal((config.memory_slots, config.dim)) * scale).astype(dtype),
                                  requires_grad=True)
        self.memory_values = Tensor((rng.standard_normal((config.memory_slots, config.dim)) * scale).astype(dtype),
                                    requires_grad=True)
        self.query_net = nn.Linear(config.in_dim, config.dim, rng, dtype=dtype)

    def __call__(self, feats: Tensor) -> Tensor:
        _validate(feats, self.config.in_dim)
        queries = self.query_net(_chunk_means(feats, self.config.out_len))
        refined = nn.scaled_dot_attention(queries, self.memory_keys, self.memory_values)
        refined = refined + nn.sinusoidal_positional_encoding(
            self.config.out_len, self.config.dim, feats.dtype)
        return nn.l2_normalize(refined)

    def attention_weights(self, feats: Tensor) -> np.ndarray:
        """Per-query weights over memory slots (rows sum to 1)."""
        queries = self.query_net(_chunk_means(feats, self.config.out_len))
        scale = 1.0 / np.sqrt(self.config.dim)
        logits = ag.matmul(queries, Tensor(self.memory_keys.data.T.copy())) * scale
        return ag.softmax(logits, axis=-1).data


class AvgPoolCompressor(nn.Module):
    """Strided mean pooling to roughly L_in/k frames, then truncate or
    zero-pad to L_a. The pooling itself has no learnable parameters."""

    def __init__(self, config: AudioCompressorConfig, rng: np.random.Generator,
                 pool: int = 2, dtype=np.float32):
        self.config = config
        self.pool = pool
        self.proj = nn.Linear(config.in_dim, config.dim, rng, dtype=dtype)

    def __call__(self, feats: Tensor) -> Tensor:
        _validate(feats, self.config.in_dim)
        pooled = nn.avg_pool_time(feats, stride=self.pool)
        fixed = _fit_length(pooled, self.config.out_len)
        out = self.proj(fixed) + nn.sinusoidal_positional_encoding(
            self.config.out_len, self.config.dim, feats.dtype)
        return nn.l2_normalize(out)


class Conv1dCompressor(nn.Module):
    """One strided conv layer (kernel 3, stride 2, zero pad 1) applied
    repeatedly until the length is <= L_a, then padded up to L_a. Weights are
    shared across applications since the repeat count depends on the input."""

    def __init__(self, config: AudioCompressorConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        c = config.in_dim
        bound = np.sqrt(6.0 / (3 * c + c))
        self.kernel = Tensor(rng.uniform(-bound, bound, (3, c, c)).astype(dtype), requires_grad=True)
        self.kernel_bias = Tensor(np.zeros(c, dtype=dtype), requires_grad=True)
        self.proj = nn.Linear(config.in_dim, config.dim, rng, dtype=dtype)

    def downsample_once(self, x: Tensor) -> Tensor:
        """out[t] = sum_d kernel[d] applied at input position 2t + d - 1."""
        batch, length, c = x.shape
        out_len = -(-length // 2)  # ceil(L/2)
        zeros = Tensor(np.zeros((batch, 1, c), dtype=x.dtype))
        padded = ag.concatenate([zeros, x, zeros], axis=1)
        taps = []
        for d in range(3):
            sliced = padded[:, d : d + 2 * out_len - 1 : 2, :]
            taps.append(ag.matmul(sliced, self.kernel[d]))
        return taps[0] + taps[1] + taps[2] + self.kernel_bias

    def __call__(self, feats: Tensor) -> Tensor:
        _validate(feats, self.config.in_dim)
        x = feats
        while x.shape[1] > self.config.out_len:
            x = self.downsample_once(x)
        fixed = _fit_length(x, self.config.out_len)
        out = self.proj(fixed) + nn.sinusoidal_positional_encoding(
            self.config.out_len, self.config.dim, feats.dtype)
        return nn.l2_normalize(out)


def _fit_length(x: Tensor, target: int) -> Tensor:
    """Truncate or zero-pad the time axis to exactly ``target`` steps."""
    length = x.shape[1]
    if length == target:
        return x
    if length > target:
        return x[:, :target, :]
    pad = Tensor(np.zeros((x.shape[0], target - length, x.shape[2]), dtype=x.dtype))
    return ag.concatenate([x, pad], axis=1)


def build_compressor(method: str, config: AudioCompressorConfig,
                     rng: np.random.Generator, dtype=np.float32) -> nn.Module:
    """Factory over the ablation axis: memory | avgpool2 | avgpool4 | conv1d."""
    if method == "memory":
        return MemoryCompressor(config, rng, dtype=dtype)
    if method == "avgpool2":
        return AvgPoolCompressor(config, rng, pool=2, dtype=dtype)
    if method == "avgpool4":
        return AvgPoolCompressor(config, rng, pool=4, dtype=dtype)
    if method == "conv1d":
        return Conv1dCompressor(config, rng, dtype=dtype)
    raise ValueError(f"unknown compression method {method!r}")
