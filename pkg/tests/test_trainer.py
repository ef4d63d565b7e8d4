"""Optimizer closed forms, schedule endpoints, loop determinism and
checkpoint-resume equivalence on a miniature synthetic dataset."""

import numpy as np
import pytest

from mmretrieval.autograd import Tensor
from mmretrieval.data import SyntheticConfig, generate_synthetic_dataset, load_manifest
from mmretrieval.trainer import (
    AdamW,
    TrainConfig,
    TrainingError,
    load_checkpoint,
    lr_at,
    train,
)

TINY_MODEL = dict(heads=2, motion_stages=1, text_layers=1, video_layers=1,
                  audio_out_len=4, audio_memory_slots=8, fusion_layers=1)


@pytest.fixture(scope="module")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tinydata")
    cfg = SyntheticConfig(n=24, latent_dim=8, segments=4,
                          lengths={"motion": 8, "text": 4, "video": 4, "audio": 10},
                          feature_dims={"motion": 48, "text": 16, "video": 16, "audio": 16},
                          noise=0.05, seed=3, test_fraction=0.25)
    ds = generate_synthetic_dataset(root, cfg)
    return load_manifest(ds.manifest_path)


def tiny_train_cfg(**overrides):
    base = dict(epochs=3, batch_size=4, dim=16, lr_start=1e-3, lr_end=1e-4, seed=0)
    base.update(overrides)
    return TrainConfig(**base)


# ---------------------------------------------------------------------------
# AdamW closed forms


def test_adamw_first_step_is_signed_unit_step():
    p = Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
    p.grad = np.array([0.5], dtype=np.float32)
    opt = AdamW({"p": p}, weight_decay=0.0)
    opt.step(lr=0.1)
    # bias-corrected m_hat / sqrt(v_hat) == sign(g) on the first step
    assert p.data[0] == pytest.approx(0.9, abs=1e-6)


def test_adamw_zero_grad_no_decay_leaves_params():
    p = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.zeros(1, dtype=np.float32)
    opt = AdamW({"p": p}, weight_decay=0.0)
    opt.step(lr=0.1)
    assert p.data[0] == pytest.approx(2.0)


def test_adamw_decoupled_decay_definition():
    p = Tensor(np.array([2.0], dtype=np.float32), requires_grad=True)
    p.grad = np.zeros(1, dtype=np.float32)
    opt = AdamW({"p": p}, weight_decay=0.01)
    opt.step(lr=0.1)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.001), rel=1e-6)


def test_adamw_no_decay_for_temperature_gain_and_memory_values():
    params = {name: Tensor(np.array([1.0], dtype=np.float32), requires_grad=True)
              for name in ("temperature.value", "norm1.gain", "memory_values",
                           "text_encoder.proj.weight")}
    for p in params.values():
        p.grad = np.zeros(1, dtype=np.float32)
    opt = AdamW(params, weight_decay=0.01)
    opt.step(lr=0.1)
    assert params["temperature.value"].data[0] == 1.0
    assert params["norm1.gain"].data[0] == 1.0
    assert params["memory_values"].data[0] == 1.0
    assert params["text_encoder.proj.weight"].data[0] == pytest.approx(0.999)


def test_adamw_nan_gradient_aborts_with_name():
    p = Tensor(np.ones(1, dtype=np.float32), requires_grad=True)
    p.grad = np.array([np.nan], dtype=np.float32)
    opt = AdamW({"encoder.weight": p})
    with pytest.raises(TrainingError, match="encoder.weight"):
        opt.step(lr=0.1)


# ---------------------------------------------------------------------------
# learning-rate schedule


def test_lr_schedule_endpoints():
    cfg = TrainConfig(epochs=200, batch_size=4)
    assert lr_at(0, cfg) == pytest.approx(1e-4)
    assert lr_at(99, cfg) == pytest.approx(1e-4)
    assert lr_at(100, cfg) == pytest.approx(1e-4)  # decay starts here
    assert lr_at(199, cfg) == pytest.approx(1e-5)


def test_lr_midpoint_of_decay_span():
    cfg = TrainConfig(epochs=101, batch_size=4, decay_start_epoch=50)
    assert lr_at(75, cfg) == pytest.approx(5.5e-5)


def test_lr_out_of_range():
    cfg = TrainConfig(epochs=10, batch_size=4)
    with pytest.raises(ValueError):
        lr_at(10, cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(batch_size=1)
    with pytest.raises(ValueError):
        TrainConfig(lr_start=1e-5, lr_end=1e-4)


# ---------------------------------------------------------------------------
# the loop


def test_same_seed_identical_history(tiny_dataset, tmp_path):
    cfg = tiny_train_cfg()
    a = train(tiny_dataset, cfg, tmp_path / "a", model_overrides=TINY_MODEL)
    b = train(tiny_dataset, cfg, tmp_path / "b", model_overrides=TINY_MODEL)
    assert a.loss_history == b.loss_history


def test_loss_decreases(tiny_dataset, tmp_path):
    cfg = tiny_train_cfg(epochs=8)
    result = train(tiny_dataset, cfg, tmp_path / "run", model_overrides=TINY_MODEL)
    assert result.loss_history[-1] < result.loss_history[0]


def test_resume_equivalence(tiny_dataset, tmp_path):
    """Interrupting at the halfway checkpoint and resuming reproduces the
    uninterrupted run's loss trajectory."""
    cfg = tiny_train_cfg(epochs=6, checkpoint_every=3)
    full = train(tiny_dataset, cfg, tmp_path / "full", model_overrides=TINY_MODEL)
    resumed = train(tiny_dataset, cfg, tmp_path / "resumed",
                    resume_from=tmp_path / "full" / "checkpoint_ep3",
                    model_overrides=TINY_MODEL)
    assert len(full.loss_history) == len(resumed.loss_history) == 6
    np.testing.assert_allclose(full.loss_history, resumed.loss_history, atol=1e-6)


def test_checkpoint_roundtrip_rebuilds_identical_model(tiny_dataset, tmp_path):
    result = train(tiny_dataset, tiny_train_cfg(), tmp_path / "run",
                   model_overrides=TINY_MODEL)
    ckpt = load_checkpoint(result.checkpoint_dir)
    rebuilt = ckpt.build_model()
    original = result.model.named_parameters()
    for name, param in rebuilt.named_parameters().items():
        np.testing.assert_array_equal(param.data, original[name].data)
    assert ckpt.epoch == 3 and len(ckpt.loss_history) == 3
    assert ckpt.config_hash


def test_missing_modality_fails_fast_with_sample_id(tiny_dataset, tmp_path):
    # drop audio from one record
    import copy
    manifest = copy.deepcopy(tiny_dataset)
    del manifest.records[2].paths["audio"]
    missing_id = manifest.records[2].id
    with pytest.raises(TrainingError, match=missing_id):
        train(manifest, tiny_train_cfg(), tmp_path / "run", model_overrides=TINY_MODEL)


def test_too_few_samples_rejected(tiny_dataset, tmp_path):
    cfg = tiny_train_cfg(batch_size=64)
    with pytest.raises(TrainingError, match="batch size"):
        train(tiny_dataset, cfg, tmp_path / "run", model_overrides=TINY_MODEL)


def test_lambda_recon_zero_vs_default_same_epoch0_alignment(tiny_dataset, tmp_path):
    """The reconstruction path is the only difference between the runs."""
    from mmretrieval.autograd import Tensor as T
    from mmretrieval.trainer import infer_model_config, stage_training_data
    from mmretrieval.model import MultiModalEmbedder

    cfg = tiny_train_cfg()
    staged = stage_training_data(tiny_dataset, cfg.modalities)
    model_a = MultiModalEmbedder(infer_model_config(tiny_dataset, cfg, **TINY_MODEL))
    model_b = MultiModalEmbedder(infer_model_config(tiny_dataset, cfg, **TINY_MODEL))
    idx = np.arange(cfg.batch_size)
    batch = {m: (T(staged.features[m][idx]), None) for m in cfg.modalities}
    _, parts_a = model_a.training_loss(batch, np.random.default_rng(0), lambda_recon=0.0)
    _, parts_b = model_b.training_loss(batch, np.random.default_rng(0), lambda_recon=0.1)
    assert parts_a["align"] == pytest.approx(parts_b["align"], abs=1e-7)
    assert parts_a["total"] != pytest.approx(parts_b["total"])


def test_sigma_zero_convergence_and_monotone_windows(tmp_path):
    """Noise-free synthetic data, 64 samples, C=32, 100 desk epochs: final
    loss well under a quarter of the initial, and non-increasing over every
    20-epoch window after epoch 10 (5% tolerance for mini-batch noise).
    Takes about a minute."""
    ds = generate_synthetic_dataset(
        tmp_path / "data", SyntheticConfig(n=64, noise=0.0, seed=3, test_fraction=0.0))
    manifest = load_manifest(ds.manifest_path)
    result = train(manifest, TrainConfig.desk(epochs=100, seed=0), tmp_path / "run")
    history = np.asarray(result.loss_history)
    assert history[-1] < 0.25 * history[0]
    for start in range(10, len(history) - 20):
        assert history[start + 20] <= history[start] * 1.05, (start, history[start])


def test_output_dir_lock(tiny_dataset, tmp_path):
    out = tmp_path / "locked"
    out.mkdir()
    (out / ".train.lock").touch()
    with pytest.raises(TrainingError, match="locked"):
        train(tiny_dataset, tiny_train_cfg(), out, model_overrides=TINY_MODEL)
