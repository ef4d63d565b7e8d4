"""Motion encoder: body-part decomposition, staged temporal/spatial attention
and temporal pooling down to fine-grained motion tokens.

A raw motion batch (B, L', D_pose) is split column-wise into K body parts,
each projected into its own C-dimensional latent space. The stacked
(B, K, L, C) tensor then runs ``stages`` rounds of [temporal transformer over
L, axis swap, spatial transformer over K, average pool stride 2 over L];
finally the part and time axes are merged into K * L_m tokens and every token
is L2-normalized. With K = 1 the spatial stage is skipped entirely and the
encoder degenerates to a plain temporal transformer with pooling (the
body-partition ablation).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor


class PartitionError(ValueError):
    pass


class InputTooShortError(ValueError):
    pass


@dataclass
class BodyPartition:
    """Disjoint column groups of the raw pose vector, one per body part."""

    parts: dict[str, list[int]]

    def __post_init__(self):
        seen: set[int] = set()
        for name, cols in self.parts.items():
            if not cols:
                raise PartitionError(f"part {name!r} has no columns")
            overlap = seen & set(cols)
            if overlap:
                raise PartitionError(f"part {name!r} overlaps columns {sorted(overlap)}")
            seen.update(cols)
        self._covered = seen

    @property
    def k(self) -> int:
        return len(self.parts)

    def validate_pose_dim(self, pose_dim: int) -> None:
        expected = set(range(pose_dim))
        if self._covered != expected:
            missing = sorted(expected - self._covered)
            extra = sorted(self._covered - expected)
            raise PartitionError(
                f"partition does not cover pose dim {pose_dim}: "
                f"missing columns {missing}, out-of-range columns {extra}")

    @classmethod
    def equal_slices(cls, pose_dim: int, k: int = 8) -> "BodyPartition":
        if pose_dim % k:
            raise PartitionError(f"pose dim {pose_dim} not divisible into {k} equal parts")
        width = pose_dim // k
        return cls({f"part{i}": list(range(i * width, (i + 1) * width)) for i in range(k)})

    @classmethod
    def whole_body(cls, pose_dim: int) -> "BodyPartition":
        return cls({"body": list(range(pose_dim))})

    @classmethod
    def load(cls, path: str | Path) -> "BodyPartition":
        raw = json.loads(Path(path).read_text())
        return cls({str(name): [int(c) for c in cols] for name, cols in raw.items()})

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.parts, indent=2) + "\n")


def partition_pose(motion, partition: BodyPartition) -> list:
    """Gather per-part column slices of (B, L, D) motion; values untouched.

    Returns one (B, L, d_k) array/Tensor per part, in partition order.
    """
    pose_dim = motion.shape[-1]
    partition.validate_pose_dim(pose_dim)
    return [motion[..., cols] for cols in partition.parts.values()]


def scatter_parts(parts: list[np.ndarray], partition: BodyPartition) -> np.ndarray:
    """Inverse of :func:`partition_pose` (oracle for the gather round trip)."""
    first = parts[0]
    pose_dim = sum(len(cols) for cols in partition.parts.values())
    out = np.zeros(first.shape[:-1] + (pose_dim,), dtype=first.dtype)
    for arr, cols in zip(parts, partition.parts.values()):
        out[..., cols] = arr
    return out


@dataclass
class MotionEncoderConfig:
    pose_dim: int = 48
    dim: int = 32
    partition: BodyPartition | None = None   # None -> eight equal slices
    stages: int = 2
    heads: int = 4
    use_positional_encoding: bool = True

    def resolved_partition(self) -> BodyPartition:
        return self.partition if self.partition is not None else BodyPartition.equal_slices(self.pose_dim, 8)


class MotionEncoder(nn.Module):
    def __init__(self, config: MotionEncoderConfig, rng: np.random.Generator, dtype=np.float32):
        self.config = config
        partition = config.resolved_partition()
        partition.validate_pose_dim(config.pose_dim)
        self._partition = partition
        self.part_proj = [nn.Linear(len(cols), config.dim, rng, dtype=dtype)
                          for cols in partition.parts.values()]
        self.temporal_layers = [nn.TransformerLayer(config.dim, config.heads, rng=rng, dtype=dtype)
                                for _ in range(config.stages)]
        if partition.k > 1:
            self.spatial_layers = [nn.TransformerLayer(config.dim, config.heads, rng=rng, dtype=dtype)
                                   for _ in range(config.stages)]
        else:
            self.spatial_layers = []

    @property
    def partition(self) -> BodyPartition:
        return self._partition

    @property
    def k(self) -> int:
        return self._partition.k

    def min_length(self) -> int:
        return 2 ** self.config.stages

    def output_tokens(self, length: int) -> int:
        return self.k * nn.pooled_length(length, self.config.stages)

    def __call__(self, motion: Tensor) -> Tensor:
        """(B, L', D_pose) raw motion -> (B, K*L_m, C) unit-norm tokens."""
        if motion.ndim != 3:
            raise ag.ShapeError(f"motion batch must be (B, L, D), got {motion.shape}")
        batch, length, pose_dim = motion.shape
        if pose_dim != self.config.pose_dim:
            raise PartitionError(f"pose dim {pose_dim} != configured {self.config.pose_dim}")
        if length < self.min_length():
            raise InputTooShortError(
                f"motion length {length} too short: {self.config.stages} pooling stages "
                f"need at least {self.min_length()} frames")

        parts = partition_pose(motion, self._partition)
        embedded = [proj(part).reshape(batch, 1, length, self.config.dim)
                    for proj, part in zip(self.part_proj, parts)]
        x = embedded[0] if len(embedded) == 1 else ag.concatenate(embedded, axis=1)

        k, dim = self.k, self.config.dim
        for stage in range(self.config.stages):
            cur_len = x.shape[2]
            folded = x.reshape(batch * k, cur_len, dim)
            if self.config.use_positional_encoding:
                folded = folded + nn.sinusoidal_positional_encoding(cur_len, dim, motion.dtype)
            folded = self.temporal_layers[stage](folded)
            x = folded.reshape(batch, k, cur_len, dim)
            if self.spatial_layers:
                swapped = x.swap_axes(1, 2).reshape(batch * cur_len, k, dim)
                swapped = self.spatial_layers[stage](swapped)
                x = swapped.reshape(batch, cur_len, k, dim).swap_axes(1, 2)
            x = nn.avg_pool_time(x)

        pooled_len = x.shape[2]
        tokens = x.reshape(batch, k * pooled_len, dim)
        return nn.l2_normalize(tokens)
