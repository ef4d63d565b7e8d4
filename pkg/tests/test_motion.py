"""Motion encoder: partition semantics, shape contracts, normalization."""

import numpy as np
import pytest

from mmretrieval.autograd import Tensor
from mmretrieval.gradcheck import check_gradients
from mmretrieval.motion import (
    BodyPartition,
    InputTooShortError,
    MotionEncoder,
    MotionEncoderConfig,
    PartitionError,
    partition_pose,
    scatter_parts,
)


def test_equal_slices_cover_48_columns():
    partition = BodyPartition.equal_slices(48, 8)
    assert partition.k == 8
    assert all(len(cols) == 6 for cols in partition.parts.values())
    partition.validate_pose_dim(48)


def test_partition_overlap_rejected():
    with pytest.raises(PartitionError, match="overlaps"):
        BodyPartition({"a": [0, 1], "b": [1, 2]})


def test_partition_missing_columns_rejected():
    partition = BodyPartition({"a": [0, 1], "b": [2]})
    with pytest.raises(PartitionError, match="missing"):
        partition.validate_pose_dim(6)


def test_partition_file_roundtrip(tmp_path):
    partition = BodyPartition.equal_slices(12, 4)
    partition.save(tmp_path / "parts.json")
    loaded = BodyPartition.load(tmp_path / "parts.json")
    assert loaded.parts == partition.parts


def test_partition_gather_values_untouched():
    rng = np.random.default_rng(0)
    motion = rng.standard_normal((2, 5, 48)).astype(np.float32)
    parts = partition_pose(motion, BodyPartition.equal_slices(48, 8))
    assert len(parts) == 8
    np.testing.assert_array_equal(parts[2], motion[..., 12:18])


def test_partition_permutation_permutes_slices():
    rng = np.random.default_rng(1)
    motion = rng.standard_normal((1, 3, 8)).astype(np.float32)
    a = BodyPartition({"x": [0, 1, 2, 3], "y": [4, 5, 6, 7]})
    b = BodyPartition({"y": [4, 5, 6, 7], "x": [0, 1, 2, 3]})
    pa = partition_pose(motion, a)
    pb = partition_pose(motion, b)
    np.testing.assert_array_equal(pa[0], pb[1])
    np.testing.assert_array_equal(pa[1], pb[0])


def test_gather_scatter_roundtrip():
    rng = np.random.default_rng(2)
    motion = rng.standard_normal((3, 4, 48)).astype(np.float32)
    partition = BodyPartition.equal_slices(48, 8)
    parts = partition_pose(motion, partition)
    np.testing.assert_array_equal(scatter_parts(parts, partition), motion)


def test_gather_scatter_roundtrip_unequal_parts():
    rng = np.random.default_rng(3)
    motion = rng.standard_normal((2, 3, 7)).astype(np.float32)
    partition = BodyPartition({"head": [6, 0], "torso": [1, 2, 3], "legs": [4, 5]})
    parts = partition_pose(motion, partition)
    np.testing.assert_array_equal(scatter_parts(parts, partition), motion)


def test_encoder_shape_contract():
    cfg = MotionEncoderConfig(pose_dim=48, dim=32, stages=2)
    encoder = MotionEncoder(cfg, np.random.default_rng(0))
    motion = Tensor(np.random.default_rng(1).standard_normal((2, 16, 48)).astype(np.float32))
    out = encoder(motion)
    assert out.shape == (2, 32, 32)  # K*L_m = 8*4


def test_encoder_without_partition_shape():
    cfg = MotionEncoderConfig(pose_dim=48, dim=32, stages=2,
                              partition=BodyPartition.whole_body(48))
    encoder = MotionEncoder(cfg, np.random.default_rng(0))
    assert encoder.spatial_layers == []  # degenerates to plain temporal encoder
    motion = Tensor(np.random.default_rng(1).standard_normal((2, 16, 48)).astype(np.float32))
    assert encoder(motion).shape == (2, 4, 32)


def ceil_div(n, d):
    return -(-n // d)


def test_encoder_token_count_formula():
    cfg = MotionEncoderConfig(pose_dim=8, dim=8, stages=2,
                              partition=BodyPartition.equal_slices(8, 2), heads=2)
    encoder = MotionEncoder(cfg, np.random.default_rng(0))
    for length in [4, 5, 7, 16, 33, 200]:
        motion = Tensor(np.zeros((1, length, 8), dtype=np.float32))
        expected = 2 * ceil_div(ceil_div(length, 2), 2)
        assert encoder(motion).shape[1] == expected == encoder.output_tokens(length)


def test_encoder_outputs_unit_norm():
    cfg = MotionEncoderConfig(pose_dim=48, dim=32)
    encoder = MotionEncoder(cfg, np.random.default_rng(4))
    motion = Tensor(np.random.default_rng(5).standard_normal((3, 16, 48)).astype(np.float32))
    norms = np.linalg.norm(encoder(motion).data, axis=-1)
    np.testing.assert_allclose(norms, np.ones_like(norms), atol=1e-5)


def test_encoder_too_short_input_names_minimum():
    cfg = MotionEncoderConfig(pose_dim=48, dim=32, stages=2)
    encoder = MotionEncoder(cfg, np.random.default_rng(0))
    with pytest.raises(InputTooShortError, match="at least 4"):
        encoder(Tensor(np.zeros((1, 3, 48), dtype=np.float32)))


def test_encoder_gradients_finite_differences():
    rng = np.random.default_rng(6)
    cfg = MotionEncoderConfig(pose_dim=8, dim=8, stages=1,
                              partition=BodyPartition.equal_slices(8, 2), heads=2)
    encoder = MotionEncoder(cfg, rng, dtype=np.float64)
    motion = Tensor(rng.standard_normal((2, 4, 8)), requires_grad=True, dtype=np.float64)
    target = rng.standard_normal((2, 4, 8))

    def loss():
        return ((encoder(motion) - target) * (encoder(motion) - target)).sum()

    wrt = {"motion": motion, **encoder.named_parameters()}
    result = check_gradients(loss, wrt, max_coords_per_tensor=2, rng=rng)
    assert result.max_rel_err <= 1e-4, result.per_tensor
