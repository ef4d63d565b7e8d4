"""End-to-end glue: encode manifest splits with a trained model, build score
matrices through the retrieval engine, and run the evaluation protocols in
both directions for any modality pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import DatasetManifest
from .engine import GalleryIndex, build_index
from .evaluation import EvalReport, ProtocolConfig, evaluate
from .model import MultiModalEmbedder


@dataclass
class EncodedSplit:
    """Per-modality encoded sequences for one manifest split, index-aligned."""

    ids: list[str]
    tokens: dict[str, list[np.ndarray]]
    weights: dict[str, list[np.ndarray]]

    def entries(self, modality: str) -> list[tuple[str, np.ndarray, np.ndarray]]:
        return [(sample_id, t, w) for sample_id, t, w in
                zip(self.ids, self.tokens[modality], self.weights[modality])]

    def queries(self, modality: str) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.tokens[modality], self.weights[modality]))


def encode_split(model: MultiModalEmbedder, manifest: DatasetManifest,
                 split: str = "test",
                 modalities: tuple[str, ...] | None = None) -> EncodedSplit:
    modalities = modalities if modalities is not None else model.config.modalities
    records = manifest.split(split)
    if not records:
        raise ValueError(f"manifest has no {split!r} split")
    encoded = EncodedSplit(ids=[r.id for r in records],
                           tokens={m: [] for m in modalities},
                           weights={m: [] for m in modalities})
    for record in records:
        sample = manifest.load_sample(record, modalities)
        for m in modalities:
            tokens, weights = model.encode_sequence(m, sample.sequences[m])
            encoded.tokens[m].append(tokens)
            encoded.weights[m].append(weights)
    return encoded


def pair_score_matrix(encoded: EncodedSplit, query_modality: str,
                      gallery_modality: str, aggregation: str = "max",
                      workers: int | None = None) -> np.ndarray:
    """(Q, N) fine-similarity matrix between two modalities of one split."""
    index = build_index(encoded.entries(gallery_modality), aggregation=aggregation)
    return index.score_all(encoded.queries(query_modality), workers=workers)


def gallery_self_similarity(encoded: EncodedSplit, modality: str,
                            aggregation: str = "max") -> np.ndarray:
    """(N, N) fine similarities among gallery items of one modality, used by
    the threshold protocol's correctness rule."""
    return pair_score_matrix(encoded, modality, modality, aggregation)


def evaluate_pair(encoded: EncodedSplit, modality_a: str, modality_b: str,
                  protocols: list[ProtocolConfig], aggregation: str = "max") -> list[EvalReport]:
    """Evaluate a modality pair in both retrieval directions.

    Ground truth is the identity pairing of the split. The threshold
    protocol's relaxation is computed in gallery space (similarities between
    gallery items of the gallery-side modality).
    """
    reports: list[EvalReport] = []
    gt = np.arange(len(encoded.ids))
    for query_mod, gallery_mod in ((modality_a, modality_b), (modality_b, modality_a)):
        scores = pair_score_matrix(encoded, query_mod, gallery_mod, aggregation)
        self_sim = None
        if any(cfg.protocol == "all_threshold" for cfg in protocols):
            self_sim = gallery_self_similarity(encoded, gallery_mod, aggregation)
        direction = f"{query_mod}2{gallery_mod}"
        for cfg in protocols:
            reports.append(evaluate(scores, gt, cfg, gallery_sim=self_sim,
                                    direction=direction))
    return reports


def build_motion_gallery(model: MultiModalEmbedder, manifest: DatasetManifest,
                         split: str = "test", out_path=None,
                         config_hash: str = "") -> GalleryIndex:
    encoded = encode_split(model, manifest, split, ("motion",))
    return build_index(encoded.entries("motion"), out_path=out_path,
                       config_hash=config_hash,
                       aggregation=model.config.aggregation)
