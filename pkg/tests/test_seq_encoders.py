"""Text and video heads: length preservation, normalization, ablation modes."""

import numpy as np
import pytest

from mmretrieval.autograd import Tensor
from mmretrieval.gradcheck import check_gradients
from mmretrieval.seq_encoders import (
    FeatureConfigError,
    SequenceEncoder,
    SequenceEncoderConfig,
    text_encoder,
    video_encoder,
)


def test_text_encoder_shape_contract():
    enc = text_encoder(in_dim=64, dim=32, rng=np.random.default_rng(0), layers=2)
    feats = Tensor(np.random.default_rng(1).standard_normal((1, 12, 64)).astype(np.float32))
    assert enc(feats).shape == (1, 12, 32)


def test_video_encoder_shape_contract():
    enc = video_encoder(in_dim=64, dim=32, rng=np.random.default_rng(0))
    assert len(enc.layers) == 6
    feats = Tensor(np.random.default_rng(1).standard_normal((2, 8, 64)).astype(np.float32))
    assert enc(feats).shape == (2, 8, 32)


def test_length_preserved_across_range():
    enc = text_encoder(in_dim=8, dim=16, rng=np.random.default_rng(0))
    for length in [1, 2, 13, 64, 256]:
        feats = Tensor(np.random.default_rng(length).standard_normal((1, length, 8)).astype(np.float32))
        assert enc(feats).shape == (1, length, 16)


def test_single_token_sequence_works():
    enc = text_encoder(in_dim=8, dim=16, rng=np.random.default_rng(0))
    out = enc(Tensor(np.ones((1, 1, 8), dtype=np.float32)))
    assert out.shape == (1, 1, 16)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), 1.0, atol=1e-5)


def test_outputs_unit_normalized():
    enc = video_encoder(in_dim=16, dim=32, rng=np.random.default_rng(2), layers=2)
    feats = Tensor(np.random.default_rng(3).standard_normal((4, 6, 16)).astype(np.float32))
    norms = np.linalg.norm(enc(feats).data, axis=-1)
    np.testing.assert_allclose(norms, np.ones_like(norms), atol=1e-5)


def test_constant_frames_zero_pe_all_tokens_identical():
    enc = video_encoder(in_dim=16, dim=32, rng=np.random.default_rng(4), layers=2,
                        use_positional_encoding=False)
    feats = Tensor(np.tile(np.random.default_rng(5).standard_normal((1, 1, 16)), (1, 8, 1)).astype(np.float32))
    out = enc(feats).data
    np.testing.assert_allclose(out, np.tile(out[:, :1], (1, 8, 1)), atol=1e-6)


def test_frame_permutation_changes_output_with_pe():
    rng = np.random.default_rng(6)
    enc = video_encoder(in_dim=16, dim=32, rng=np.random.default_rng(7), layers=2)
    feats = rng.standard_normal((1, 8, 16)).astype(np.float32)
    out = enc(Tensor(feats)).data
    permuted = enc(Tensor(feats[:, ::-1].copy())).data
    assert not np.allclose(out, permuted[:, ::-1], atol=1e-4)


def test_global_pool_mode_single_token():
    enc = SequenceEncoder(SequenceEncoderConfig("text", in_dim=8, dim=16, layers=1,
                                                global_pool=True), np.random.default_rng(0))
    feats = Tensor(np.random.default_rng(1).standard_normal((3, 9, 8)).astype(np.float32))
    out = enc(feats)
    assert out.shape == (3, 1, 16)
    np.testing.assert_allclose(np.linalg.norm(out.data, axis=-1), np.ones((3, 1)), atol=1e-5)


def test_wrong_feature_dim_is_config_error():
    enc = text_encoder(in_dim=64, dim=32, rng=np.random.default_rng(0))
    with pytest.raises(FeatureConfigError):
        enc(Tensor(np.zeros((1, 4, 32), dtype=np.float32)))


def test_mask_excludes_padding_from_attention():
    enc = text_encoder(in_dim=8, dim=16, rng=np.random.default_rng(8), layers=1)
    rng = np.random.default_rng(9)
    feats = rng.standard_normal((1, 4, 8)).astype(np.float32)
    padded = np.concatenate([feats, rng.standard_normal((1, 2, 8)).astype(np.float32)], axis=1)
    mask = np.array([[1, 1, 1, 1, 0, 0]], dtype=np.float32)
    out_masked = enc(Tensor(padded), mask=mask).data[:, :4]
    out_plain = enc(Tensor(feats)).data
    np.testing.assert_allclose(out_masked, out_plain, atol=1e-5)


def test_gradients_through_two_layers():
    rng = np.random.default_rng(10)
    enc = SequenceEncoder(SequenceEncoderConfig("text", in_dim=6, dim=8, layers=2, heads=2),
                          rng, dtype=np.float64)
    feats = Tensor(rng.standard_normal((2, 3, 6)), requires_grad=True, dtype=np.float64)
    target = rng.standard_normal((2, 3, 8))

    def loss():
        diff = enc(feats) - target
        return (diff * diff).sum()

    result = check_gradients(loss, {"feats": feats, **enc.named_parameters()},
                             max_coords_per_tensor=2, rng=rng)
    assert result.max_rel_err <= 1e-4, result.per_tensor
