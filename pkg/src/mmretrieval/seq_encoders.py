"""Text and video encoder heads.

Both consume precomputed token features (the upstream language/vision models
live behind the tensor-file boundary) and run a linear projection followed by
a small transformer stack, preserving the full token sequence. A global-pool
ablation flag collapses the output to its single mean token instead, which
reproduces the global-alignment baseline.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .autograd import ShapeError, Tensor


class FeatureConfigError(ValueError):
    pass


@dataclass
class SequenceEncoderConfig:
    source: str                      # "text" or "video"
    in_dim: int
    dim: int = 32
    layers: int = 2                  # text default; video uses 6
    heads: int = 4
    use_positional_encoding: bool = True
    global_pool: bool = False        # "Global Only" ablation: emit 1 mean token


class SequenceEncoder(nn.Module):
    def __init__(self, config: SequenceEncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        self.proj = nn.Linear(config.in_dim, config.dim, rng, dtype=dtype)
        self.layers = [nn.TransformerLayer(config.dim, config.heads, rng=rng, dtype=dtype)
                       for _ in range(config.layers)]

    def __call__(self, feats: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """(B, L, C_in) features -> (B, L, C) unit-norm tokens (or (B, 1, C)
        in global-pool mode). ``mask`` marks valid input tokens."""
        if feats.ndim != 3:
            raise ShapeError(f"feature batch must be (B, L, C_in), got {feats.shape}")
        if feats.shape[-1] != self.config.in_dim:
            raise FeatureConfigError(
                f"{self.config.source} features have dim {feats.shape[-1]}, "
                f"projection configured for {self.config.in_dim}")
        x = self.proj(feats)
        if self.config.use_positional_encoding:
            x = x + nn.sinusoidal_positional_encoding(x.shape[1], self.config.dim, x.dtype)
        for layer in self.layers:
            x = layer(x, mask=mask)
        if self.config.global_pool:
            if mask is None:
                x = x.mean(axis=1, keepdims=True)
            else:
                m = np.asarray(mask, dtype=x.dtype.type)[..., None]
                x = (x * m).sum(axis=1, keepdims=True) / m.sum(axis=-2, keepdims=True)
        return nn.l2_normalize(x)


def text_encoder(in_dim: int, dim: int, rng: np.random.Generator,
                 layers: int = 2, dtype=np.float32, **kw) -> SequenceEncoder:
    return SequenceEncoder(SequenceEncoderConfig("text", in_dim, dim, layers, **kw), rng, dtype)


def video_encoder(in_dim: int, dim: int, rng: np.random.Generator,
                  layers: int = 6, dtype=np.float32, **kw) -> SequenceEncoder:
    return SequenceEncoder(SequenceEncoderConfig("video", in_dim, dim, layers, **kw), rng, dtype)
