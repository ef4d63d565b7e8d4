"""Persistent gallery index and exact late-interaction scoring.

The index holds encoded motion token sequences (unit-normalized) with their
precomputed token weights, so queries from any modality can be scored against
a frozen gallery without model access. Scoring is exact (no approximate
pruning): per query the fine-grained similarity h is evaluated against every
entry, vectorized over contiguous gallery blocks and optionally fanned out
over a thread pool. Results are merged in block order, so they are identical
across thread counts.

On-disk layout (little-endian): magic ``MMRI``, version u32, meta length u64,
meta JSON (ids, per-entry token counts, dim, config hash, blob offsets), then
one tokens TensorFile and one weights TensorFile per entry, concatenated.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from os import PathLike
from pathlib import Path

import numpy as np

from .tensorfile import TensorFormatError, tensor_blob_size, tensor_bytes, tensor_from_bytes

INDEX_MAGIC = b"MMRI"
INDEX_VERSION = 1
_HEAD = struct.Struct("<4sIQ")

DEFAULT_BLOCK_ENTRIES = 256


class EngineError(ValueError):
    """Index build or query constraint violation."""


@dataclass
class RankingResult:
    query_id: str
    ranked: list[tuple[str, float]]        # (candidate id, score), best first
    gt_rank: int | None = None             # 1-based rank of ground truth if given


class GalleryIndex:
    """Immutable after build; concurrent readers are unrestricted."""

    def __init__(self, ids: list[str], tokens: list[np.ndarray],
                 weights: list[np.ndarray], config_hash: str = "",
                 aggregation: str = "max"):
        if not ids:
            raise EngineError("index needs at least one entry")
        seen: set[str] = set()
        for entry_id in ids:
            if entry_id in seen:
                raise EngineError(f"duplicate id {entry_id!r} in gallery")
            seen.add(entry_id)
        dims = {t.shape[1] for t in tokens}
        if len(dims) != 1:
            raise EngineError(f"entries disagree on feature dim: {sorted(dims)}")
        for i, (t, w) in enumerate(zip(tokens, weights)):
            if t.ndim != 2 or t.shape[0] < 1:
                raise EngineError(f"entry {ids[i]!r}: tokens must be (L>=1, C)")
            if w.shape != (t.shape[0],):
                raise EngineError(f"entry {ids[i]!r}: weights shape {w.shape} != ({t.shape[0]},)")
        self.ids = list(ids)
        self.entry_tokens = [np.ascontiguousarray(t, dtype=np.float32) for t in tokens]
        self.entry_weights = [np.ascontiguousarray(w, dtype=np.float32) for w in weights]
        self.config_hash = config_hash
        self.aggregation = aggregation
        self.dim = self.entry_tokens[0].shape[1]
        lengths = np.array([t.shape[0] for t in self.entry_tokens], dtype=np.intp)
        self.offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.intp)
        self.all_tokens = np.concatenate(self.entry_tokens, axis=0)
        self.all_weights = np.concatenate(self.entry_weights)

    def __len__(self) -> int:
        return len(self.ids)

    # ------------------------------------------------------------------
    # scoring

    def _score_block(self, query_tokens: np.ndarray, query_weights: np.ndarray,
                     first: int, last: int) -> np.ndarray:
        """h for entries [first, last); exact blocked evaluation."""
        span = slice(self.offsets[first], self.offsets[last])
        sims = query_tokens @ self.all_tokens[span].T          # (Lq, T_block)
        starts = (self.offsets[first:last] - self.offsets[first]).astype(np.intp)
        if self.aggregation == "max":
            per_entry = np.maximum.reduceat(sims, starts, axis=1)      # (Lq, n)
            per_token = sims.max(axis=0)                               # (T_block,)
        else:
            counts = np.diff(self.offsets[first : last + 1]).astype(sims.dtype)
            per_entry = np.add.reduceat(sims, starts, axis=1) / counts
            per_token = sims.mean(axis=0)
        term_q = query_weights @ per_entry
        term_g = np.add.reduceat(per_token * self.all_weights[span], starts)
        return 0.5 * (term_q + term_g)

    def score(self, query_tokens: np.ndarray, query_weights: np.ndarray | None = None,
              block_entries: int = DEFAULT_BLOCK_ENTRIES,
              workers: int | None = None) -> np.ndarray:
        """Exact h against every entry, parallelized over gallery blocks."""
        query_tokens = np.asarray(query_tokens, dtype=np.float32)
        if query_tokens.ndim != 2 or query_tokens.shape[1] != self.dim:
            raise EngineError(f"query tokens must be (Lq, {self.dim}), got {query_tokens.shape}")
        if query_tokens.shape[0] < 1:
            raise EngineError("query has no tokens")
        if query_weights is None:
            query_weights = np.full(query_tokens.shape[0],
                                    1.0 / query_tokens.shape[0], dtype=np.float32)
        else:
            query_weights = np.asarray(query_weights, dtype=np.float32)
            if query_weights.shape != (query_tokens.shape[0],):
                raise EngineError("query weights length mismatch")

        n = len(self)
        bounds = [(s, min(s + block_entries, n)) for s in range(0, n, block_entries)]
        out = np.empty(n, dtype=np.float32)
        if workers is None or workers <= 1 or len(bounds) == 1:
            for first, last in bounds:
                out[first:last] = self._score_block(query_tokens, query_weights, first, last)
            return out
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [(first, last, pool.submit(self._score_block, query_tokens,
                                                 query_weights, first, last))
                       for first, last in bounds]
            for first, last, fut in futures:   # merged in block order
                out[first:last] = fut.result()
        return out

    def retrieve(self, query_tokens: np.ndarray, k: int,
                 query_weights: np.ndarray | None = None,
                 query_id: str = "query", gt_id: str | None = None,
                 workers: int | None = None) -> RankingResult:
        """Top-k by score; ties broken by ascending insertion order."""
        if not 1 <= k <= len(self):
            raise EngineError(f"k={k} outside [1, {len(self)}] for this gallery")
        scores = self.score(query_tokens, query_weights, workers=workers)
        order = np.argsort(-scores, kind="stable")
        ranked = [(self.ids[i], float(scores[i])) for i in order[:k]]
        gt_rank = None
        if gt_id is not None:
            try:
                gt_pos = self.ids.index(gt_id)
            except ValueError:
                raise EngineError(f"ground-truth id {gt_id!r} not in gallery")
            gt_rank = int(np.nonzero(order == gt_pos)[0][0]) + 1
        return RankingResult(query_id=query_id, ranked=ranked, gt_rank=gt_rank)

    def score_all(self, queries: list[tuple[np.ndarray, np.ndarray | None]],
                  block_entries: int = DEFAULT_BLOCK_ENTRIES,
                  workers: int | None = None) -> np.ndarray:
        """Full (Q, N) score matrix; memory bounded by the block size."""
        return np.stack([self.score(t, w, block_entries=block_entries, workers=workers)
                         for t, w in queries])

    # ------------------------------------------------------------------
    # persistence

    def save(self, path: str | PathLike) -> None:
        blobs: list[bytes] = []
        entries_meta = []
        offset = 0
        for i in range(len(self)):
            tok = tensor_bytes(self.entry_tokens[i])
            wgt = tensor_bytes(self.entry_weights[i])
            entries_meta.append({"id": self.ids[i], "tokens_offset": offset,
                                 "weights_offset": offset + len(tok),
                                 "length": int(self.entry_tokens[i].shape[0])})
            offset += len(tok) + len(wgt)
            blobs.append(tok)
            blobs.append(wgt)
        meta = {"version": INDEX_VERSION, "dim": self.dim, "count": len(self),
                "config_hash": self.config_hash, "aggregation": self.aggregation,
                "entries": entries_meta}
        meta_bytes = json.dumps(meta, sort_keys=True).encode()
        target = Path(path)
        tmp = target.with_name(target.name + ".tmp")
        with open(tmp, "wb") as fh:
            fh.write(_HEAD.pack(INDEX_MAGIC, INDEX_VERSION, len(meta_bytes)))
            fh.write(meta_bytes)
            for blob in blobs:
                fh.write(blob)
        tmp.replace(target)

    @classmethod
    def load(cls, path: str | PathLike) -> "GalleryIndex":
        blob = Path(path).read_bytes()
        if len(blob) < _HEAD.size:
            raise TensorFormatError("truncated index header", len(blob))
        magic, version, meta_len = _HEAD.unpack_from(blob, 0)
        if magic != INDEX_MAGIC:
            raise TensorFormatError(f"bad index magic {magic!r}", 0)
        if version != INDEX_VERSION:
            raise TensorFormatError(f"unknown index version {version}", 4)
        meta = json.loads(blob[_HEAD.size : _HEAD.size + meta_len])
        base = _HEAD.size + meta_len
        ids, tokens, weights = [], [], []
        for entry in meta["entries"]:
            t_off = base + entry["tokens_offset"]
            t_len = tensor_blob_size(blob, t_off)
            tokens.append(tensor_from_bytes(blob[t_off : t_off + t_len]))
            w_off = base + entry["weights_offset"]
            w_len = tensor_blob_size(blob, w_off)
            weights.append(tensor_from_bytes(blob[w_off : w_off + w_len]))
            ids.append(entry["id"])
        return cls(ids, tokens, weights, config_hash=meta["config_hash"],
                   aggregation=meta.get("aggregation", "max"))


def build_index(entries: list[tuple[str, np.ndarray, np.ndarray]],
                out_path: str | PathLike | None = None,
                config_hash: str = "", aggregation: str = "max") -> GalleryIndex:
    """Build (and optionally persist) an index from (id, tokens, weights)."""
    if not entries:
        raise EngineError("cannot build an empty index")
    ids = [e[0] for e in entries]
    tokens = [e[1] for e in entries]
    weights = [e[2] for e in entries]
    index = GalleryIndex(ids, tokens, weights, config_hash=config_hash,
                         aggregation=aggregation)
    if out_path is not None:
        index.save(out_path)
    return index
