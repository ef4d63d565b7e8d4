"""The full multi-modal embedder: one encoder per modality, per-modality
weight heads, a shared learnable temperature and the masked-reconstruction
fusion transformer, combined into the training loss

    L = L_align + lambda_recon * L_recon.

Alignment mode is switchable for the ablation grid: ``sequence`` scores full
token sequences, ``global`` collapses every sequence to its mean token first,
``global+sequence`` averages the two similarity matrices with equal weight.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any

import numpy as np

from . import alignment as al
from . import autograd as ag
from . import nn
from .alignment import Temperature, WeightHead
from .audio import AudioCompressorConfig, build_compressor
from .autograd import Tensor
from .data import MODALITIES, TokenSequence
from .motion import BodyPartition, MotionEncoder, MotionEncoderConfig
from .seq_encoders import SequenceEncoder, SequenceEncoderConfig

ALIGNMENT_MODES = ("sequence", "global", "global+sequence")
# fusion concatenation order for reconstruction: context first, motion last
FUSION_ORDER = ("text", "video", "audio", "motion")


@dataclass
class ModelConfig:
    dim: int = 32
    modalities: tuple[str, ...] = MODALITIES
    heads: int = 4
    # motion
    pose_dim: int = 48
    body_partition: bool = True            # False -> whole pose as one part
    partition_parts: dict[str, list[int]] | None = None
    motion_stages: int = 2
    # text / video heads
    text_in_dim: int = 64
    text_layers: int = 2
    video_in_dim: int = 64
    video_layers: int = 6
    # audio
    audio_in_dim: int = 64
    audio_out_len: int = 8
    audio_memory_slots: int = 32
    audio_method: str = "memory"           # memory | avgpool2 | avgpool4 | conv1d
    # alignment + reconstruction
    aggregation: str = "max"               # max | mean
    alignment_mode: str = "sequence"
    fusion_layers: int = 2
    mask_ratio: float = 0.3
    tau_init: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.alignment_mode not in ALIGNMENT_MODES:
            raise ValueError(f"alignment_mode must be one of {ALIGNMENT_MODES}")
        if self.aggregation not in al.AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {al.AGGREGATIONS}")
        unknown = set(self.modalities) - set(MODALITIES)
        if unknown:
            raise ValueError(f"unknown modalities {sorted(unknown)}")
        if "motion" not in self.modalities:
            raise ValueError("motion modality is required")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "ModelConfig":
        d = dict(d)
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


class MultiModalEmbedder(nn.Module):
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        rng = np.random.default_rng(config.seed)

        if config.partition_parts is not None:
            partition = BodyPartition(config.partition_parts)
        elif config.body_partition:
            partition = BodyPartition.equal_slices(config.pose_dim, 8)
        else:
            partition = BodyPartition.whole_body(config.pose_dim)
        self.motion_encoder = MotionEncoder(
            MotionEncoderConfig(pose_dim=config.pose_dim, dim=config.dim,
                                partition=partition, stages=config.motion_stages,
                                heads=config.heads), rng, dtype=dtype)
        if "text" in config.modalities:
            self.text_encoder = SequenceEncoder(
                SequenceEncoderConfig("text", config.text_in_dim, config.dim,
                                      config.text_layers, config.heads), rng, dtype=dtype)
        if "video" in config.modalities:
            self.video_encoder = SequenceEncoder(
                SequenceEncoderConfig("video", config.video_in_dim, config.dim,
                                      config.video_layers, config.heads), rng, dtype=dtype)
        if "audio" in config.modalities:
            self.audio_encoder = build_compressor(
                config.audio_method,
                AudioCompressorConfig(in_dim=config.audio_in_dim, dim=config.dim,
                                      out_len=config.audio_out_len,
                                      memory_slots=config.audio_memory_slots,
                                      heads=config.heads), rng, dtype=dtype)
        self.weight_heads = {m: WeightHead(config.dim, rng, dtype=dtype)
                             for m in config.modalities}
        self.temperature = Temperature(config.tau_init, dtype=dtype)
        self.mask_token = Tensor((rng.standard_normal(config.dim) * 0.02).astype(dtype),
                                 requires_grad=True)
        self.fusion = [nn.TransformerLayer(config.dim, config.heads, rng=rng, dtype=dtype)
                       for _ in range(config.fusion_layers)]

    # nn.Module traversal does not descend into dicts; expose the heads
    def named_parameters(self, prefix: str = "") -> dict[str, Tensor]:
        params = super().named_parameters(prefix)
        for modality, head in self.weight_heads.items():
            key = f"{prefix}.weight_heads.{modality}" if prefix else f"weight_heads.{modality}"
            params.update(head.named_parameters(key))
        return params

    # ------------------------------------------------------------------
    # encoding

    def encode(self, modality: str, feats: Tensor,
               mask: np.ndarray | None = None) -> tuple[Tensor, Tensor]:
        """Encode one modality batch to (tokens, weights).

        Motion expects raw (B, L', D_pose) input and ignores ``mask`` (motion
        batches are uniform length); the other modalities take precomputed
        (B, L, C_in) features with an optional validity mask.
        """
        if modality not in self.config.modalities:
            raise ValueError(f"model not configured for modality {modality!r}")
        if modality == "motion":
            tokens = self.motion_encoder(feats)
            token_mask = None
        elif modality == "text":
            tokens = self.text_encoder(feats, mask=mask)
            token_mask = mask
        elif modality == "video":
            tokens = self.video_encoder(feats, mask=mask)
            token_mask = mask
        else:
            tokens = self.audio_encoder(feats)
            token_mask = None  # compressor output is always fully valid
        weights = self.weight_heads[modality](tokens, mask=token_mask)
        return tokens, weights

    def encode_sequence(self, modality: str, seq: TokenSequence) -> tuple[np.ndarray, np.ndarray]:
        """Inference helper: one sample in, plain numpy (tokens, weights) out."""
        feats = Tensor(seq.tokens[None, ...])
        mask = None if seq.mask is None else np.asarray(seq.mask, dtype=np.float32)[None, :]
        tokens, weights = self.encode(modality, feats, mask=mask)
        return tokens.data[0], weights.data[0]

    # ------------------------------------------------------------------
    # losses

    def alignment_loss(self, encoded: dict[str, tuple[Tensor, Tensor]]) -> Tensor:
        mode = self.config.alignment_mode
        if mode == "sequence":
            return al.total_alignment_loss(encoded, self.temperature, self.config.aggregation)
        collapsed = {m: _collapse_global(t) for m, (t, _) in encoded.items()}
        if mode == "global":
            return al.total_alignment_loss(collapsed, self.temperature, self.config.aggregation)
        # global+sequence: equal-weight mix of the two similarity matrices
        total: Tensor | None = None
        for a, b in al.modality_pairs(tuple(encoded)):
            seq_sim = al.sequence_similarity(encoded[a][0], encoded[a][1],
                                             encoded[b][0], encoded[b][1],
                                             self.config.aggregation)
            glob_sim = al.sequence_similarity(collapsed[a][0], collapsed[a][1],
                                              collapsed[b][0], collapsed[b][1],
                                              self.config.aggregation)
            loss = al.contrastive_pair_loss((seq_sim + glob_sim) * 0.5, self.temperature)
            total = loss if total is None else total + loss
        return total

    def reconstruction_loss(self, encoded: dict[str, tuple[Tensor, Tensor]],
                            rng: np.random.Generator,
                            mask_ratio: float | None = None) -> Tensor:
        """Masked motion reconstruction from fused multi-modal context.

        One uniformly sampled position set of floor(mask_ratio * T) motion
        tokens is shared across the batch, so identical samples in a batch
        incur identical per-sample losses. Masked tokens are replaced by the
        shared learnable mask token plus the motion positional encoding; the
        loss is the batch mean of per-sample L2 norms over all positions.
        """
        if "motion" not in encoded:
            raise al.EmptySequenceError("reconstruction needs encoded motion tokens")
        ratio = self.config.mask_ratio if mask_ratio is None else mask_ratio
        if not 0.0 <= ratio <= 1.0:
            raise ValueError(f"mask_ratio must be in [0, 1], got {ratio}")
        motion_tokens = encoded["motion"][0]
        batch, n_tokens, dim = motion_tokens.shape

        n_masked = int(ratio * n_tokens)
        mask = np.zeros((n_tokens, 1), dtype=motion_tokens.dtype.type)
        if n_masked > 0:
            positions = rng.choice(n_tokens, size=n_masked, replace=False)
            mask[positions] = 1.0
        pe = nn.sinusoidal_positional_encoding(n_tokens, dim, motion_tokens.dtype)
        replacement = self.mask_token + Tensor(pe)
        masked_motion = motion_tokens * (1.0 - mask) + replacement * mask

        pieces = [encoded[m][0] for m in FUSION_ORDER if m in encoded and m != "motion"]
        pieces.append(masked_motion)
        fused = ag.concatenate(pieces, axis=1)
        for layer in self.fusion:
            fused = layer(fused)
        recovered = fused[:, fused.shape[1] - n_tokens :, :]

        diff = recovered - motion_tokens
        per_sample = ag.sqrt((diff * diff).reshape(batch, n_tokens * dim).sum(axis=1))
        return per_sample.mean()

    def training_loss(self, batch: dict[str, tuple[Tensor, np.ndarray | None]],
                      rng: np.random.Generator,
                      lambda_recon: float = 0.1,
                      mask_ratio: float | None = None) -> tuple[Tensor, dict[str, float]]:
        """Total loss over a paired batch of raw inputs.

        ``batch`` maps modality -> (features, validity mask or None). Returns
        the scalar loss tensor plus detached per-term values for logging.
        """
        encoded = {m: self.encode(m, feats, mask=mask) for m, (feats, mask) in batch.items()}
        align = self.alignment_loss(encoded)
        parts = {"align": float(align.data)}
        total = align
        if lambda_recon != 0.0 and len(encoded) >= 2:
            recon = self.reconstruction_loss(encoded, rng, mask_ratio)
            total = align + lambda_recon * recon
            parts["recon"] = float(recon.data)
        parts["total"] = float(total.data)
        return total, parts


def _collapse_global(tokens: Tensor) -> tuple[Tensor, Tensor]:
    """Mean-pool a unit-token sequence to one re-normalized global token."""
    batch = tokens.shape[0]
    pooled = nn.l2_normalize(tokens.mean(axis=1, keepdims=True))
    ones = Tensor(np.ones((batch, 1), dtype=tokens.dtype.type))
    return pooled, ones


def total_loss(align_loss: Tensor, recon_loss: Tensor | None,
               lambda_recon: float) -> Tensor:
    """L = L_align + lambda_recon * L_recon."""
    if recon_loss is None or lambda_recon == 0.0:
        return align_loss
    return align_loss + lambda_recon * recon_loss
