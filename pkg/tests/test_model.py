"""Full embedder wiring: encode contracts, alignment modes, reconstruction."""

import numpy as np
import pytest

from mmretrieval import autograd as ag
from mmretrieval import nn
from mmretrieval.autograd import Tensor
from mmretrieval.gradcheck import check_gradients
from mmretrieval.model import FUSION_ORDER, ModelConfig, MultiModalEmbedder


def tiny_config(**overrides):
    base = dict(dim=16, heads=2, pose_dim=8, body_partition=False, motion_stages=1,
                text_in_dim=12, text_layers=1, video_in_dim=12, video_layers=1,
                audio_in_dim=12, audio_out_len=4, audio_memory_slots=4,
                fusion_layers=1, seed=0)
    base.update(overrides)
    return ModelConfig(**base)


def tiny_batch(rng, modalities=("motion", "text", "video", "audio"), batch=4,
               dtype=np.float32):
    lengths = {"motion": 4, "text": 3, "video": 3, "audio": 6}
    dims = {"motion": 8, "text": 12, "video": 12, "audio": 12}
    return {m: (Tensor(rng.standard_normal((batch, lengths[m], dims[m])).astype(dtype),
                       dtype=dtype), None)
            for m in modalities}


def test_encode_shapes_all_modalities():
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(1)
    batch = tiny_batch(rng)
    expected_lengths = {"motion": 2, "text": 3, "video": 3, "audio": 4}
    for modality, (feats, _) in batch.items():
        tokens, weights = model.encode(modality, feats)
        assert tokens.shape == (4, expected_lengths[modality], 16)
        assert weights.shape == (4, expected_lengths[modality])
        np.testing.assert_allclose(weights.data.sum(axis=1), np.ones(4), atol=1e-6)
        norms = np.linalg.norm(tokens.data, axis=-1)
        np.testing.assert_allclose(norms, np.ones_like(norms), atol=1e-5)


def test_model_requires_motion():
    with pytest.raises(ValueError, match="motion"):
        tiny_config(modalities=("text", "video"))


def test_named_parameters_include_weight_heads_and_temperature():
    model = MultiModalEmbedder(tiny_config())
    names = set(model.named_parameters())
    assert "temperature.value" in names
    assert "mask_token" in names
    assert any(n.startswith("weight_heads.text") for n in names)
    assert any(n.startswith("motion_encoder") for n in names)


def test_training_loss_runs_and_parts_consistent():
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(2)
    batch = tiny_batch(rng)
    loss, parts = model.training_loss(batch, np.random.default_rng(3), lambda_recon=0.1)
    assert parts["total"] == pytest.approx(parts["align"] + 0.1 * parts["recon"], rel=1e-5)
    assert np.isfinite(loss.data)


def test_lambda_zero_total_equals_alignment():
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(4)
    batch = tiny_batch(rng)
    loss, parts = model.training_loss(batch, np.random.default_rng(5), lambda_recon=0.0)
    assert parts["total"] == parts["align"]
    assert "recon" not in parts


def test_total_loss_linear_in_lambda():
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(6)
    batch = tiny_batch(rng)
    _, p1 = model.training_loss(batch, np.random.default_rng(7), lambda_recon=0.1)
    _, p2 = model.training_loss(batch, np.random.default_rng(7), lambda_recon=0.2)
    assert p2["total"] - p1["total"] == pytest.approx(0.1 * p1["recon"], abs=1e-6)


def test_reconstruction_matches_naive_reimplementation():
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(8)
    batch = tiny_batch(rng, batch=2)
    encoded = {m: model.encode(m, feats) for m, (feats, _) in batch.items()}

    loss = model.reconstruction_loss(encoded, np.random.default_rng(42), mask_ratio=0.5)

    # naive path: same mask draw, explicit concatenate / forward / slice / norm
    motion = encoded["motion"][0].data
    b, t, c = motion.shape
    n_masked = int(0.5 * t)
    positions = np.random.default_rng(42).choice(t, size=n_masked, replace=False)
    mask = np.zeros((t, 1), dtype=np.float32)
    mask[positions] = 1.0
    replacement = model.mask_token.data + nn.sinusoidal_positional_encoding(t, c)
    masked = motion * (1 - mask) + replacement * mask
    pieces = [encoded[m][0].data for m in FUSION_ORDER if m != "motion"] + [masked]
    fused = Tensor(np.concatenate(pieces, axis=1))
    for layer in model.fusion:
        fused = layer(fused)
    recovered = fused.data[:, -t:, :]
    per_sample = np.sqrt(((recovered - motion) ** 2).reshape(b, -1).sum(axis=1))
    assert loss.item() == pytest.approx(per_sample.mean(), abs=1e-6)


def test_reconstruction_zero_residual_fusion_is_layernorm_cascade():
    model = MultiModalEmbedder(tiny_config(mask_ratio=0.0))
    layer = model.fusion[0]
    layer.attn.out_proj.weight.data[:] = 0
    layer.attn.out_proj.bias.data[:] = 0
    layer.mlp.fc2.weight.data[:] = 0
    layer.mlp.fc2.bias.data[:] = 0
    rng = np.random.default_rng(9)
    batch = tiny_batch(rng, batch=2)
    encoded = {m: model.encode(m, feats) for m, (feats, _) in batch.items()}
    loss = model.reconstruction_loss(encoded, np.random.default_rng(0), mask_ratio=0.0)
    motion = encoded["motion"][0]
    pieces = [encoded[m][0] for m in FUSION_ORDER if m != "motion"] + [motion]
    fused = layer.norm2(layer.norm1(ag.concatenate(pieces, axis=1)))
    recovered = fused.data[:, -motion.shape[1]:, :]
    expected = np.sqrt(((recovered - motion.data) ** 2).reshape(2, -1).sum(axis=1)).mean()
    assert np.isfinite(loss.item())
    assert loss.item() == pytest.approx(expected, abs=1e-6)


def test_duplicate_samples_identical_per_sample_loss():
    # shared mask positions across the batch make duplicates indistinguishable
    model = MultiModalEmbedder(tiny_config())
    rng = np.random.default_rng(10)
    one = tiny_batch(rng, batch=1)
    dup = {m: (Tensor(np.repeat(feats.data, 2, axis=0)), None) for m, (feats, _) in one.items()}
    encoded = {m: model.encode(m, feats) for m, (feats, _) in dup.items()}
    motion = encoded["motion"][0]
    t, c = motion.shape[1], motion.shape[2]
    positions = np.random.default_rng(0).choice(t, size=int(0.3 * t), replace=False)
    mask = np.zeros((t, 1), dtype=np.float32)
    mask[positions] = 1.0
    replacement = model.mask_token.data + nn.sinusoidal_positional_encoding(t, c)
    masked = motion.data * (1 - mask) + replacement * mask
    pieces = [encoded[m][0].data for m in FUSION_ORDER if m != "motion"] + [masked]
    fused = Tensor(np.concatenate(pieces, axis=1))
    for layer in model.fusion:
        fused = layer(fused)
    recovered = fused.data[:, -t:, :]
    per_sample = np.sqrt(((recovered - motion.data) ** 2).reshape(2, -1).sum(axis=1))
    assert per_sample[0] == pytest.approx(per_sample[1], abs=1e-6)


def test_alignment_modes_run_and_differ():
    rng = np.random.default_rng(11)
    batch = tiny_batch(rng)
    losses = {}
    for mode in ("sequence", "global", "global+sequence"):
        model = MultiModalEmbedder(tiny_config(alignment_mode=mode))
        encoded = {m: model.encode(m, feats) for m, (feats, _) in batch.items()}
        losses[mode] = model.alignment_loss(encoded).item()
    assert len({round(v, 6) for v in losses.values()}) == 3


def test_mean_aggregation_mode():
    model = MultiModalEmbedder(tiny_config(aggregation="mean"))
    rng = np.random.default_rng(12)
    batch = tiny_batch(rng)
    loss, _ = model.training_loss(batch, np.random.default_rng(0), lambda_recon=0.0)
    assert np.isfinite(loss.data)


def test_end_to_end_gradcheck_total_loss():
    rng = np.random.default_rng(13)
    model = MultiModalEmbedder(tiny_config(), dtype=np.float64)
    batch = tiny_batch(rng, batch=2, dtype=np.float64)

    def loss():
        total, _ = model.training_loss(batch, np.random.default_rng(5),
                                       lambda_recon=0.1, mask_ratio=0.5)
        return total

    params = model.named_parameters()
    # sample a few coordinates of every parameter tensor
    result = check_gradients(loss, params, max_coords_per_tensor=1, rng=rng)
    assert result.max_rel_err <= 1e-4, {k: v for k, v in result.per_tensor.items() if v > 1e-4}
