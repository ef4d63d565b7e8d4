"""Audio compression: fixed-length contract, memory attention, baselines."""

import numpy as np
import pytest

from mmretrieval import nn
from mmretrieval.audio import (
    AudioCompressorConfig,
    AvgPoolCompressor,
    Conv1dCompressor,
    EmptyInputError,
    MemoryCompressor,
    adaptive_chunk_bounds,
    build_compressor,
)
from mmretrieval.autograd import GradTape, Tensor
from mmretrieval.gradcheck import check_gradients

CFG = AudioCompressorConfig(in_dim=16, dim=24, out_len=8, memory_slots=32)


def feats(length, seed=0, batch=1, dim=16):
    rng = np.random.default_rng(seed)
    return Tensor(rng.standard_normal((batch, length, dim)).astype(np.float32))


def test_fixed_output_dims_across_lengths():
    comp = MemoryCompressor(CFG, np.random.default_rng(0))
    assert comp(feats(10)).shape == (1, 8, 24)
    assert comp(feats(2000)).shape == (1, 8, 24)


def test_all_methods_agree_on_dims_for_random_lengths():
    rng = np.random.default_rng(1)
    methods = [build_compressor(m, CFG, np.random.default_rng(2))
               for m in ("memory", "avgpool2", "avgpool4", "conv1d")]
    for length in rng.integers(5, 3001, size=50):
        x = feats(int(length), seed=int(length))
        shapes = {comp(x).shape for comp in methods}
        assert shapes == {(1, 8, 24)}


def test_single_memory_slot_output_ignores_input():
    cfg = AudioCompressorConfig(in_dim=16, dim=24, out_len=4, memory_slots=1)
    comp = MemoryCompressor(cfg, np.random.default_rng(3))
    out_a = comp(feats(11, seed=4)).data
    out_b = comp(feats(500, seed=5)).data
    np.testing.assert_array_equal(out_a, out_b)
    # attention over one slot gives exactly the value row; PE then normalization
    expected = comp.memory_values.data[0] + nn.sinusoidal_positional_encoding(4, 24)
    expected = expected / np.linalg.norm(expected, axis=-1, keepdims=True)
    np.testing.assert_allclose(out_a[0], expected, atol=1e-5)


def test_chunk_means_match_explicit_computation():
    x = np.arange(4, dtype=np.float32).reshape(1, 4, 1) * 2 + 1  # [1,3,5,7]
    comp = MemoryCompressor(AudioCompressorConfig(in_dim=1, dim=8, out_len=2),
                            np.random.default_rng(0))
    from mmretrieval.audio import _chunk_means
    means = _chunk_means(Tensor(x), 2).data
    np.testing.assert_allclose(means[0, :, 0], [2.0, 6.0])  # mean(t1,t2), mean(t3,t4)


def test_chunk_bounds_never_empty():
    for length in [1, 2, 3, 7, 8, 9, 4096]:
        for chunks in [1, 2, 8]:
            bounds = adaptive_chunk_bounds(length, chunks)
            assert len(bounds) == chunks
            assert all(e > s for s, e in bounds)
            assert bounds[0][0] == 0 and bounds[-1][1] == length


def test_empty_input_rejected():
    comp = MemoryCompressor(CFG, np.random.default_rng(0))
    with pytest.raises(EmptyInputError):
        comp(Tensor(np.zeros((1, 0, 16), dtype=np.float32)))


def test_memory_attention_weights_sum_to_one():
    comp = MemoryCompressor(CFG, np.random.default_rng(6))
    weights = comp.attention_weights(feats(40, seed=7))
    np.testing.assert_allclose(weights.sum(axis=-1), np.ones((1, 8)), atol=1e-6)


def test_avgpool2_values():
    cfg = AudioCompressorConfig(in_dim=1, dim=4, out_len=2)
    comp = AvgPoolCompressor(cfg, np.random.default_rng(0), pool=2)
    x = Tensor(np.array([1.0, 3.0, 5.0, 7.0], dtype=np.float32).reshape(1, 4, 1))
    pooled = nn.avg_pool_time(x, stride=2).data
    np.testing.assert_array_equal(pooled[0, :, 0], [2.0, 6.0])
    assert comp(x).shape == (1, 2, 4)


def test_conv1d_identity_kernel_is_strided_subsampling():
    cfg = AudioCompressorConfig(in_dim=3, dim=4, out_len=2)
    comp = Conv1dCompressor(cfg, np.random.default_rng(0))
    comp.kernel.data[:] = 0.0
    comp.kernel.data[1] = np.eye(3, dtype=np.float32)  # center tap only
    comp.kernel_bias.data[:] = 0.0
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 9, 3)).astype(np.float32)
    out = comp.downsample_once(Tensor(x)).data
    np.testing.assert_allclose(out, x[:, ::2], atol=1e-7)


def test_gradients_reach_memory_and_query_net():
    comp = MemoryCompressor(CFG, np.random.default_rng(8))
    x = feats(33, seed=9, batch=2)
    # project onto a random direction: the sum of squares of unit-normalized
    # outputs is constant and would give vanishing gradients
    probe = np.random.default_rng(10).standard_normal((2, 8, 24)).astype(np.float32)
    with GradTape() as tape:
        out = comp(x)
        tape.backward((out * probe).sum())
    for name, param in comp.named_parameters().items():
        assert param.grad is not None and np.abs(param.grad).max() > 1e-4, name


def test_memory_compressor_gradcheck():
    rng = np.random.default_rng(10)
    cfg = AudioCompressorConfig(in_dim=4, dim=6, out_len=2, memory_slots=3, heads=1)
    comp = MemoryCompressor(cfg, rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 5, 4)), requires_grad=True, dtype=np.float64)
    target = rng.standard_normal((1, 2, 6))

    def loss():
        diff = comp(x) - target
        return (diff * diff).sum()

    result = check_gradients(loss, {"x": x, **comp.named_parameters()},
                             max_coords_per_tensor=3, rng=rng)
    assert result.max_rel_err <= 1e-4, result.per_tensor


def test_conv1d_compressor_gradcheck():
    rng = np.random.default_rng(11)
    cfg = AudioCompressorConfig(in_dim=3, dim=4, out_len=2)
    comp = Conv1dCompressor(cfg, rng, dtype=np.float64)
    x = Tensor(rng.standard_normal((1, 7, 3)), requires_grad=True, dtype=np.float64)

    def loss():
        out = comp(x)
        return (out * out).sum()

    result = check_gradients(loss, {"x": x, **comp.named_parameters()},
                             max_coords_per_tensor=3, rng=rng)
    assert result.max_rel_err <= 1e-4, result.per_tensor
