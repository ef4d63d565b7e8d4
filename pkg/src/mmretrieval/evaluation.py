"""Retrieval metrics (R@K, MedR) under the three evaluation protocols.

* ``all``: rank the ground truth within the full test gallery.
* ``all_threshold``: a retrieval is correct at rank r if any candidate ranked
  at or above r has gallery-space fine similarity to the ground-truth item of
  at least the threshold (0.80 by default); R@K uses that relaxed
  correctness, MedR the rank of the first correct candidate. The ground
  truth itself always qualifies (self-similarity 1), so the relaxation can
  only help.
* ``small_batches``: one seeded shuffle partitions the queries into disjoint
  batches of 32; metrics are computed inside each batch against its own
  32-item sub-gallery and averaged across batches.

Ranks use stable descending sort, so score ties resolve by ascending
candidate insertion order, exactly like the retrieval engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PROTOCOLS = ("all", "all_threshold", "small_batches")
DEFAULT_K = (1, 3, 5, 10)


class EvaluationError(ValueError):
    pass


@dataclass
class ProtocolConfig:
    protocol: str = "all"
    threshold: float = 0.80
    batch_size: int = 32
    k_values: tuple[int, ...] = DEFAULT_K
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in PROTOCOLS:
            raise EvaluationError(f"protocol must be one of {PROTOCOLS}")
        if not -1.0 <= self.threshold <= 1.0:
            raise EvaluationError("threshold must lie in [-1, 1]")
        if self.batch_size < 2:
            raise EvaluationError("small-batches protocol needs batch size >= 2")


@dataclass
class EvalReport:
    protocol: str
    direction: str
    n_queries: int
    recall: dict[int, float]       # K -> percent
    median_rank: float

    def __post_init__(self):
        ks = sorted(self.recall)
        values = [self.recall[k] for k in ks]
        assert values == sorted(values), "R@K must be non-decreasing in K"

    def row(self) -> str:
        cells = "  ".join(f"R@{k} {self.recall[k]:6.2f}" for k in sorted(self.recall))
        return f"{self.direction:<16s} {self.protocol:<14s} {cells}  MedR {self.median_rank:6.2f}"


def recall_at_k(ranks, k: int) -> float:
    """Percent of ranks <= k."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvaluationError("recall over an empty rank list")
    return 100.0 * float(np.mean(ranks <= k))


def median_rank(ranks) -> float:
    """Median; even-count lists take the mean of the two central values."""
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise EvaluationError("median of an empty rank list")
    return float(np.median(ranks))


def ranks_of_ground_truth(scores: np.ndarray, gt_index: np.ndarray) -> np.ndarray:
    """1-based rank of each query's ground-truth column under stable
    descending sort of its row."""
    scores = np.asarray(scores)
    gt_index = np.asarray(gt_index)
    if scores.ndim != 2:
        raise EvaluationError(f"score matrix must be 2-D, got {scores.shape}")
    if gt_index.shape != (scores.shape[0],):
        raise EvaluationError("need exactly one ground-truth index per query")
    if np.any(gt_index < 0) or np.any(gt_index >= scores.shape[1]):
        bad = int(np.argmax((gt_index < 0) | (gt_index >= scores.shape[1])))
        raise EvaluationError(f"query {bad} has ground truth outside the gallery")
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for i in range(scores.shape[0]):
        ranks[i] = int(np.nonzero(order[i] == gt_index[i])[0][0]) + 1
    return ranks


def _first_correct_ranks(scores: np.ndarray, gt_index: np.ndarray,
                         gallery_sim: np.ndarray, threshold: float) -> np.ndarray:
    """Rank of the first candidate whose gallery-space similarity to the
    ground-truth item reaches the threshold."""
    order = np.argsort(-scores, axis=1, kind="stable")
    ranks = np.empty(scores.shape[0], dtype=np.int64)
    for i in range(scores.shape[0]):
        correct = gallery_sim[order[i], gt_index[i]] >= threshold
        hits = np.nonzero(correct)[0]
        if hits.size == 0:  # cannot happen when sim(gt, gt) >= threshold
            ranks[i] = scores.shape[1] + 1
        else:
            ranks[i] = int(hits[0]) + 1
    return ranks


def evaluate(scores: np.ndarray, gt_index: np.ndarray, cfg: ProtocolConfig,
             gallery_sim: np.ndarray | None = None,
             direction: str = "x2y") -> EvalReport:
    """Evaluate a (Q, N) score matrix under one protocol.

    ``gt_index[q]`` is the gallery column holding query q's ground truth.
    ``gallery_sim`` (N, N fine similarities between gallery items) is
    required by the threshold protocol. Pure function of its inputs: the
    same matrix and seed produce the identical report.
    """
    scores = np.asarray(scores)
    gt_index = np.asarray(gt_index)

    if cfg.protocol == "all":
        ranks = ranks_of_ground_truth(scores, gt_index)
    elif cfg.protocol == "all_threshold":
        if gallery_sim is None:
            raise EvaluationError("threshold protocol needs gallery self-similarities")
        ranks_of_ground_truth(scores, gt_index)  # validate inputs identically
        ranks = _first_correct_ranks(scores, gt_index, np.asarray(gallery_sim), cfg.threshold)
    else:
        return _evaluate_small_batches(scores, gt_index, cfg, direction)

    return EvalReport(protocol=cfg.protocol, direction=direction,
                      n_queries=int(scores.shape[0]),
                      recall={k: recall_at_k(ranks, k) for k in cfg.k_values},
                      median_rank=median_rank(ranks))


def _evaluate_small_batches(scores: np.ndarray, gt_index: np.ndarray,
                            cfg: ProtocolConfig, direction: str) -> EvalReport:
    n = scores.shape[0]
    if n < cfg.batch_size:
        raise EvaluationError(f"small-batches protocol needs >= {cfg.batch_size} queries, got {n}")
    ranks_of_ground_truth(scores, gt_index)  # input validation
    rng = np.random.default_rng(cfg.seed)
    perm = rng.permutation(n)
    n_batches = n // cfg.batch_size
    batch_recall = {k: [] for k in cfg.k_values}
    batch_medr = []
    for b in range(n_batches):
        idx = perm[b * cfg.batch_size : (b + 1) * cfg.batch_size]
        sub = scores[np.ix_(idx, gt_index[idx])]
        local_gt = np.arange(len(idx))
        ranks = ranks_of_ground_truth(sub, local_gt)
        for k in cfg.k_values:
            batch_recall[k].append(recall_at_k(ranks, k))
        batch_medr.append(median_rank(ranks))
    return EvalReport(protocol="small_batches", direction=direction,
                      n_queries=n_batches * cfg.batch_size,
                      recall={k: float(np.mean(batch_recall[k])) for k in cfg.k_values},
                      median_rank=float(np.mean(batch_medr)))


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned human-readable table, one row per (direction, protocol)."""
    lines = [r.row() for r in reports]
    return "\n".join(lines)


def reports_to_json(reports: list[EvalReport]) -> list[dict]:
    return [{"protocol": r.protocol, "direction": r.direction,
             "n_queries": r.n_queries,
             "recall": {str(k): v for k, v in sorted(r.recall.items())},
             "median_rank": r.median_rank} for r in reports]
