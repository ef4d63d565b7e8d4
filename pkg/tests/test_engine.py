"""Retrieval engine: exactness vs the sequential oracle, persistence,
determinism across thread counts, ranking semantics."""

import numpy as np
import pytest

from mmretrieval.alignment import fine_similarity
from mmretrieval.engine import EngineError, GalleryIndex, build_index


def unit_rows(rng, n, c):
    x = rng.standard_normal((n, c)).astype(np.float32)
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_gallery(rng, n, c=8, max_len=6):
    entries = []
    for i in range(n):
        length = int(rng.integers(1, max_len + 1))
        tokens = unit_rows(rng, length, c)
        weights = rng.dirichlet(np.ones(length)).astype(np.float32)
        entries.append((f"g{i:04d}", tokens, weights))
    return entries


def test_build_reports_size_and_dim():
    rng = np.random.default_rng(0)
    index = build_index(random_gallery(rng, 3))
    assert len(index) == 3 and index.dim == 8


def test_duplicate_id_rejected():
    rng = np.random.default_rng(1)
    entries = random_gallery(rng, 2)
    entries[1] = ("g0000", entries[1][1], entries[1][2])
    with pytest.raises(EngineError, match="g0000"):
        build_index(entries)


def test_scores_match_pairwise_fine_similarity():
    rng = np.random.default_rng(2)
    entries = random_gallery(rng, 40)
    index = build_index(entries)
    for agg in ("max", "mean"):
        index.aggregation = agg
        q = unit_rows(rng, 4, 8)
        qw = rng.dirichlet(np.ones(4)).astype(np.float32)
        scores = index.score(q, qw)
        for j, (_, toks, w) in enumerate(entries):
            expected = fine_similarity(q, toks, qw, w, aggregation=agg)
            assert scores[j] == pytest.approx(expected, abs=1e-5)
    index.aggregation = "max"


def test_identity_query_scores_one_and_ranks_first():
    rng = np.random.default_rng(3)
    entries = random_gallery(rng, 20)
    index = build_index(entries)
    qid, toks, w = entries[7]
    result = index.retrieve(toks, k=5, query_weights=w, gt_id=qid)
    assert result.ranked[0][0] == qid
    assert result.ranked[0][1] == pytest.approx(1.0, abs=1e-5)
    assert result.gt_rank == 1


def test_topk_ordering_simple():
    entries = [("a", np.array([[1.0, 0.0]], dtype=np.float32), np.array([1.0], dtype=np.float32)),
               ("b", np.array([[0.0, 1.0]], dtype=np.float32), np.array([1.0], dtype=np.float32)),
               ("c", np.array([[0.6, 0.8]], dtype=np.float32), np.array([1.0], dtype=np.float32))]
    index = build_index(entries)
    result = index.retrieve(np.array([[0.0, 1.0]], dtype=np.float32), k=1)
    assert result.ranked[0][0] == "b"


def test_tie_break_by_insertion_order():
    tok = np.array([[1.0, 0.0]], dtype=np.float32)
    w = np.array([1.0], dtype=np.float32)
    index = build_index([("later", tok, w), ("earlier", tok, w)])
    result = index.retrieve(tok, k=2)
    assert [r[0] for r in result.ranked] == ["later", "earlier"]


def test_k_bounds_validated():
    rng = np.random.default_rng(4)
    index = build_index(random_gallery(rng, 3))
    q = unit_rows(rng, 2, 8)
    with pytest.raises(EngineError):
        index.retrieve(q, k=5)
    with pytest.raises(EngineError):
        index.retrieve(q, k=0)


def test_query_dim_mismatch_rejected():
    rng = np.random.default_rng(5)
    index = build_index(random_gallery(rng, 3, c=8))
    with pytest.raises(EngineError):
        index.score(unit_rows(rng, 2, 16))


def test_blocked_parallel_equals_sequential():
    rng = np.random.default_rng(6)
    index = build_index(random_gallery(rng, 500))
    for _ in range(20):
        q = unit_rows(rng, int(rng.integers(1, 8)), 8)
        sequential = index.score(q, block_entries=len(index), workers=None)
        blocked = index.score(q, block_entries=37, workers=None)
        parallel = index.score(q, block_entries=37, workers=4)
        np.testing.assert_allclose(blocked, sequential, atol=1e-5)
        np.testing.assert_array_equal(parallel, blocked)


def test_thread_count_independence():
    rng = np.random.default_rng(7)
    index = build_index(random_gallery(rng, 200))
    q = unit_rows(rng, 5, 8)
    results = [index.score(q, block_entries=16, workers=w) for w in (None, 1, 2, 8)]
    for other in results[1:]:
        np.testing.assert_array_equal(results[0], other)


def test_save_load_bit_identical_rankings(tmp_path):
    rng = np.random.default_rng(8)
    index = build_index(random_gallery(rng, 64), out_path=tmp_path / "g.mmri",
                        config_hash="abc123")
    loaded = GalleryIndex.load(tmp_path / "g.mmri")
    assert loaded.config_hash == "abc123"
    assert loaded.ids == index.ids
    q = unit_rows(rng, 3, 8)
    np.testing.assert_array_equal(index.score(q), loaded.score(q))
    a = index.retrieve(q, k=10)
    b = loaded.retrieve(q, k=10)
    assert a.ranked == b.ranked


def test_score_all_matches_independent_retrieves():
    rng = np.random.default_rng(9)
    index = build_index(random_gallery(rng, 8))
    queries = [(unit_rows(rng, 3, 8), None) for _ in range(4)]
    matrix = index.score_all(queries)
    assert matrix.shape == (4, 8)
    for qi, (toks, _) in enumerate(queries):
        np.testing.assert_array_equal(matrix[qi], index.score(toks))


def test_gallery_permutation_preserves_scores_and_gt_rank():
    rng = np.random.default_rng(10)
    entries = random_gallery(rng, 30)
    index = build_index(entries)
    perm = rng.permutation(len(entries))
    permuted = build_index([entries[i] for i in perm])
    q = unit_rows(rng, 4, 8)
    base = dict(zip(index.ids, index.score(q)))
    shuffled = dict(zip(permuted.ids, permuted.score(q)))
    for key in base:
        assert shuffled[key] == pytest.approx(base[key], abs=1e-6)
    gt = entries[11][0]
    assert index.retrieve(q, k=1, gt_id=gt).gt_rank == permuted.retrieve(q, k=1, gt_id=gt).gt_rank


def test_single_entry_identical_pair_scores_one():
    rng = np.random.default_rng(11)
    toks = unit_rows(rng, 4, 8)
    index = build_index([("only", toks, np.full(4, 0.25, dtype=np.float32))])
    matrix = index.score_all([(toks, np.full(4, 0.25, dtype=np.float32))])
    assert matrix[0, 0] == pytest.approx(1.0, abs=1e-6)
