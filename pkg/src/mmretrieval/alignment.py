"""Sequence-level alignment: fine-grained similarity, temperature-scaled
softmax similarity matrices, bidirectional KL contrastive loss and the total
loss stack.

The similarity between two token sequences x (L_x tokens) and y (L_y tokens)
with weight vectors w_x, w_y is

    h(x, y) = 1/2 sum_i w_x[i] * max_j <x_i, y_j>
            + 1/2 sum_j w_y[j] * max_i <y_j, x_i>

with dot products over unit-normalized tokens. The mean variant replaces the
max over the opposing sequence with its mean. Masked tokens are excluded from
both the weighted sums and the max/mean. With normalized weights and unit
tokens |h| <= 1 and h is symmetric in its arguments.

Per modality pair the training loss softmaxes h / tau row-wise in both
directions and, with identity targets, the KL term reduces to the mean of
-log of the diagonal; the pair loss returns the sum of both directions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from . import nn
from .autograd import Tensor

AGGREGATIONS = ("max", "mean")
TAU_MIN, TAU_MAX = 0.01, 10.0
# masked token-pair dots sit below any true dot of unit vectors (>= -1)
_MASK_PENALTY = 4.0


class EmptySequenceError(ValueError):
    pass


class PairingError(ValueError):
    pass


class WeightHead(nn.Module):
    """Per-modality linear map producing softmax token weights."""

    def __init__(self, dim: int, rng: np.random.Generator, dtype=np.float32):
        self.proj = nn.Linear(dim, 1, rng, dtype=dtype)

    def __call__(self, tokens: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """(B, L, C) tokens -> (B, L) weights; masked tokens get weight 0."""
        logits = self.proj(tokens).reshape(tokens.shape[0], tokens.shape[1])
        return ag.softmax(logits, axis=1, mask=mask)


class Temperature(nn.Module):
    """Learnable softmax temperature, clamped to [0.01, 10] after updates."""

    def __init__(self, initial: float = 0.1, dtype=np.float32):
        self.value = Tensor(np.asarray(initial, dtype=dtype), requires_grad=True)

    def clamp(self) -> None:
        np.clip(self.value.data, TAU_MIN, TAU_MAX, out=self.value.data)

    def item(self) -> float:
        return float(self.value.data)


@dataclass
class SimilarityMatrix:
    """Pairwise sequence similarities for one modality pair."""

    values: np.ndarray          # (B1, B2)
    provenance: tuple[str, str] = ("x", "y")

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


# ---------------------------------------------------------------------------
# single-pair scoring (inference path, plain numpy)


def _prep(tokens: np.ndarray, weights: np.ndarray | None,
          mask: np.ndarray | None, side: str) -> tuple[np.ndarray, np.ndarray]:
    tokens = np.asarray(tokens)
    if tokens.ndim != 2:
        raise ValueError(f"{side} tokens must be (L, C), got {tokens.shape}")
    if mask is not None:
        keep = np.asarray(mask, dtype=bool)
        tokens = tokens[keep]
        if weights is not None:
            weights = np.asarray(weights)[keep]
    if tokens.shape[0] == 0:
        raise EmptySequenceError(f"{side} sequence has no valid tokens")
    if weights is None:
        weights = np.full(tokens.shape[0], 1.0 / tokens.shape[0], dtype=tokens.dtype)
    else:
        weights = np.asarray(weights, dtype=tokens.dtype)
        if weights.shape != (tokens.shape[0],):
            raise ValueError(f"{side} weights shape {weights.shape} != ({tokens.shape[0]},)")
    return tokens, weights


def fine_similarity(x: np.ndarray, y: np.ndarray,
                    wx: np.ndarray | None = None, wy: np.ndarray | None = None,
                    aggregation: str = "max",
                    x_mask: np.ndarray | None = None,
                    y_mask: np.ndarray | None = None) -> float:
    """Fine-grained similarity h between two unit-normalized token sequences.

    ``wx``/``wy`` are normalized weight vectors (uniform over valid tokens
    when omitted). ``aggregation`` picks max or mean over the opposing
    sequence.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    x, wx = _prep(x, wx, x_mask, "x")
    y, wy = _prep(y, wy, y_mask, "y")
    dots = x @ y.T
    if aggregation == "max":
        term_x = float(wx @ dots.max(axis=1))
        term_y = float(wy @ dots.max(axis=0))
    else:
        term_x = float(wx @ dots.mean(axis=1))
        term_y = float(wy @ dots.mean(axis=0))
    return 0.5 * (term_x + term_y)


def similarity_matrix(batch_x: list, batch_y: list, aggregation: str = "max",
                      provenance: tuple[str, str] = ("x", "y"),
                      block_size: int = 64) -> SimilarityMatrix:
    """Entry (i, j) = fine_similarity(x_i, y_j) over batches of
    (tokens, weights) pairs, computed in blocked batched dot products.

    Each batch element is ``(tokens, weights)`` with ``weights=None`` meaning
    uniform. Mathematically identical to the pairwise loop; errors from an
    empty sequence name the offending index.
    """
    if not batch_x or not batch_y:
        raise EmptySequenceError("similarity_matrix needs non-empty batches")
    xs, ys = [], []
    for idx, item in enumerate(batch_x):
        try:
            xs.append(_prep(item[0], item[1], None, "x"))
        except EmptySequenceError as exc:
            raise EmptySequenceError(f"batch_x[{idx}]: {exc}") from exc
    for idx, item in enumerate(batch_y):
        try:
            ys.append(_prep(item[0], item[1], None, "y"))
        except EmptySequenceError as exc:
            raise EmptySequenceError(f"batch_y[{idx}]: {exc}") from exc

    out = np.zeros((len(xs), len(ys)), dtype=np.float64)
    y_lens = [t.shape[0] for t, _ in ys]
    y_offsets = np.concatenate([[0], np.cumsum(y_lens)])
    for start in range(0, len(ys), block_size):
        stop = min(start + block_size, len(ys))
        block_tokens = np.concatenate([ys[j][0] for j in range(start, stop)], axis=0)
        local_offsets = (y_offsets[start:stop] - y_offsets[start]).astype(np.intp)
        block_weights = np.concatenate([ys[j][1] for j in range(start, stop)])
        for i, (xt, xw) in enumerate(xs):
            sims = xt @ block_tokens.T                      # (Lx, T_block)
            if aggregation == "max":
                seg = np.maximum.reduceat(sims, local_offsets, axis=1)
                tok = sims.max(axis=0)
            else:
                seg_sum = np.add.reduceat(sims, local_offsets, axis=1)
                seg = seg_sum / np.asarray(y_lens[start:stop])
                tok = sims.mean(axis=0)
            term_x = xw @ seg
            term_y = np.add.reduceat(tok * block_weights, local_offsets)
            out[i, start:stop] = 0.5 * (term_x + term_y)
    return SimilarityMatrix(values=out, provenance=provenance)


# ---------------------------------------------------------------------------
# batched differentiable scoring (training path)


def sequence_similarity(x: Tensor, wx: Tensor, y: Tensor, wy: Tensor,
                        aggregation: str = "max",
                        x_mask: np.ndarray | None = None,
                        y_mask: np.ndarray | None = None) -> Tensor:
    """(B1, B2) similarity matrix as a differentiable graph.

    ``x``: (B1, Lx, C) unit tokens with weights ``wx``: (B1, Lx); same for y.
    Masked positions must already have weight 0; they are additionally pushed
    below the valid range before the max and excluded from the mean.
    """
    if aggregation not in AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}")
    b1, lx, dim = x.shape
    b2, ly, _ = y.shape
    flat = ag.matmul(x.reshape(b1 * lx, dim), y.reshape(b2 * ly, dim).transpose((1, 0)))
    dots = flat.reshape(b1, lx, b2, ly)

    mx = None if x_mask is None else np.asarray(x_mask, dtype=x.dtype.type)
    my = None if y_mask is None else np.asarray(y_mask, dtype=y.dtype.type)

    if aggregation == "max":
        dots_y = dots if my is None else dots + (my[None, None, :, :] - 1.0) * _MASK_PENALTY
        best_y = dots_y.max(axis=3)                     # (B1, Lx, B2)
        dots_x = dots if mx is None else dots + (mx[:, :, None, None] - 1.0) * _MASK_PENALTY
        best_x = dots_x.max(axis=1)                     # (B1, B2, Ly)
    else:
        if my is None:
            best_y = dots.mean(axis=3)
        else:
            counts = my.sum(axis=1)                     # (B2,)
            best_y = (dots * my[None, None, :, :]).sum(axis=3) / counts[None, None, :]
        if mx is None:
            best_x = dots.mean(axis=1)
        else:
            counts = mx.sum(axis=1)                     # (B1,)
            best_x = (dots * mx[:, :, None, None]).sum(axis=1) / counts[:, None, None]

    term_x = (best_y * wx.reshape(b1, lx, 1)).sum(axis=1)   # (B1, B2)
    term_y = (best_x * wy.reshape(1, b2, ly)).sum(axis=2)   # (B1, B2)
    return (term_x + term_y) * 0.5


def contrastive_pair_loss(sim, tau: Temperature | Tensor) -> Tensor:
    """Bidirectional KL alignment loss for one paired batch.

    ``sim`` is the (B, B) similarity matrix (Tensor for training or a
    SimilarityMatrix/array for evaluation); row i is paired with column i.
    With one-hot targets each KL term reduces to mean_i of -log softmax(sim /
    tau) at the diagonal; both directions are summed.
    """
    if isinstance(sim, SimilarityMatrix):
        sim = Tensor(sim.values)
    elif not isinstance(sim, Tensor):
        sim = Tensor(np.asarray(sim))
    if sim.ndim != 2 or sim.shape[0] != sim.shape[1]:
        raise PairingError(f"contrastive loss needs a square paired matrix, got {sim.shape}")
    tau_t = tau.value if isinstance(tau, Temperature) else tau
    scaled = sim / tau_t
    return _diagonal_nll(scaled) + _diagonal_nll(scaled.transpose((1, 0)))


def _diagonal_nll(logits: Tensor) -> Tensor:
    """mean_i of -log softmax(logits)[i, i] via a stable log-sum-exp."""
    n = logits.shape[0]
    shift = logits.max(axis=1, keepdims=True).detach()
    shifted = logits - shift
    lse = ag.log(ag.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - lse
    diag = log_probs[np.arange(n), np.arange(n)]
    return -diag.mean()


def modality_pairs(modalities: tuple[str, ...]) -> list[tuple[str, str]]:
    ordered = list(modalities)
    return [(ordered[i], ordered[j])
            for i in range(len(ordered)) for j in range(i + 1, len(ordered))]


def total_alignment_loss(encoded: dict[str, tuple[Tensor, Tensor]],
                         tau: Temperature, aggregation: str = "max") -> Tensor:
    """Sum of pair losses over all unordered present-modality pairs, each
    with equal weight 1. ``encoded`` maps modality -> (tokens, weights)."""
    names = tuple(encoded)
    if len(names) < 2:
        raise PairingError("alignment needs at least two modalities")
    batch_sizes = {m: encoded[m][0].shape[0] for m in names}
    if len(set(batch_sizes.values())) != 1:
        raise PairingError(f"modalities must share batch pairing by index: {batch_sizes}")
    total: Tensor | None = None
    for a, b in modality_pairs(names):
        xa, wa = encoded[a]
        xb, wb = encoded[b]
        sim = sequence_similarity(xa, wa, xb, wb, aggregation=aggregation)
        loss = contrastive_pair_loss(sim, tau)
        total = loss if total is None else total + loss
    return total
