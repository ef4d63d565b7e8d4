"""Mini-batch training loop: AdamW with decoupled weight decay, linear
learning-rate decay after the first half of training, seeded shuffling and
masking, and resumable checkpoints.

Full-scale defaults (200 epochs, batch 64, C=512, lr 1e-4 decaying linearly
to 1e-5 after the first 100 epochs, lambda_recon 0.1) are the documented
configuration; ``TrainConfig.desk()`` is the C=32 / batch 16 / 100-epoch
profile used for desk-scale verification.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autograd import GradTape, Tensor
from .data import MODALITIES, DatasetManifest, load_manifest
from .model import ModelConfig, MultiModalEmbedder
from .tensorfile import read_tensor, write_tensor


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    dim: int = 512
    lr_start: float = 1e-4
    lr_end: float = 1e-5
    decay_start_epoch: int | None = None    # None -> epochs // 2
    lambda_recon: float = 0.1
    mask_ratio: float = 0.3
    weight_decay: float = 1e-2
    seed: int = 0
    modalities: tuple[str, ...] = MODALITIES
    checkpoint_every: int = 0               # 0 -> final checkpoint only

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("contrastive training needs batch_size >= 2 for negatives")
        if not (self.lr_start >= self.lr_end > 0):
            raise ValueError("need lr_start >= lr_end > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be positive")

    @property
    def decay_start(self) -> int:
        return self.epochs // 2 if self.decay_start_epoch is None else self.decay_start_epoch

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        """Desk-scale profile: small latent dim and batch; the higher learning
        rate suits the tiny synthetic datasets this profile trains on."""
        base = dict(epochs=100, batch_size=16, dim=32, lr_start=1e-3, lr_end=1e-4)
        base.update(overrides)
        return cls(**base)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["modalities"] = list(self.modalities)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["modalities"] = tuple(d["modalities"])
        return cls(**d)


def config_hash(*configs: dict) -> str:
    blob = json.dumps(configs, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Constant lr_start, then linear interpolation to lr_end at the final epoch."""
    if not 0 <= epoch < cfg.epochs:
        raise ValueError(f"epoch {epoch} outside [0, {cfg.epochs})")
    start = cfg.decay_start
    if epoch < start:
        return cfg.lr_start
    last = cfg.epochs - 1
    if last <= start:
        return cfg.lr_end
    t = (epoch - start) / (last - start)
    return cfg.lr_start + t * (cfg.lr_end - cfg.lr_start)


def _no_decay(name: str) -> bool:
    # temperature, layer-norm gains and memory bank values are never decayed
    return "temperature" in name or name.endswith(".gain") or "memory_values" in name


class AdamW:
    """Decoupled-weight-decay Adam with bias correction."""

    def __init__(self, params: dict[str, Tensor], beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8, weight_decay: float = 1e-2):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.data) for k, p in params.items()}
        self.step_count = 0

    def step(self, lr: float) -> None:
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            grad = p.grad
            if grad is None:
                continue
            if not np.isfinite(grad).all():
                raise TrainingError(f"non-finite gradient for parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            if self.weight_decay and not _no_decay(name):
                p.data *= 1.0 - lr * self.weight_decay
            p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self) -> dict[str, dict[str, np.ndarray]]:
        return {"m": self.m, "v": self.v}

    def load_state(self, m: dict[str, np.ndarray], v: dict[str, np.ndarray],
                   step_count: int) -> None:
        for name in self.params:
            self.m[name] = m[name].astype(self.m[name].dtype, copy=True)
            self.v[name] = v[name].astype(self.v[name].dtype, copy=True)
        self.step_count = step_count


# ---------------------------------------------------------------------------
# data staging


@dataclass
class StagedData:
    """Train-split features stacked per modality, ready to batch."""

    features: dict[str, np.ndarray]               # modality -> (N, L, C_in)
    masks: dict[str, np.ndarray | None]           # modality -> (N, L) or None
    ids: list[str]

    @property
    def n(self) -> int:
        return len(self.ids)


def stage_training_data(manifest: DatasetManifest, modalities: tuple[str, ...]) -> StagedData:
    """Load every train sample, failing fast (with the sample id) on a missing
    modality. Ragged lengths are right-padded with a validity mask; motion
    must be uniform length because temporal pooling is maskless."""
    records = manifest.split("train")
    if not records:
        raise TrainingError("manifest has no train split")
    per_mod: dict[str, list[np.ndarray]] = {m: [] for m in modalities}
    for record in records:
        for m in modalities:
            if m not in record.paths:
                raise TrainingError(f"sample {record.id!r} is missing configured modality {m!r}")
        sample = manifest.load_sample(record, modalities)
        for m in modalities:
            per_mod[m].append(sample.sequences[m].tokens)

    features: dict[str, np.ndarray] = {}
    masks: dict[str, np.ndarray | None] = {}
    for m, arrays in per_mod.items():
        lengths = {a.shape[0] for a in arrays}
        if len(lengths) == 1:
            features[m] = np.stack(arrays)
            masks[m] = None
            continue
        if m == "motion":
            raise TrainingError(f"motion lengths differ across samples: {sorted(lengths)}; "
                                "motion batches must be uniform length")
        max_len = max(lengths)
        c = arrays[0].shape[1]
        stacked = np.zeros((len(arrays), max_len, c), dtype=np.float32)
        mask = np.zeros((len(arrays), max_len), dtype=np.float32)
        for i, a in enumerate(arrays):
            stacked[i, : a.shape[0]] = a
            mask[i, : a.shape[0]] = 1.0
        features[m] = stacked
        masks[m] = mask
    return StagedData(features=features, masks=masks, ids=[r.id for r in records])


def infer_model_config(manifest: DatasetManifest, cfg: TrainConfig,
                       **overrides) -> ModelConfig:
    """Fill per-modality input dims from the first train record's tensors."""
    record = manifest.split("train")[0]
    sample = manifest.load_sample(record, cfg.modalities)
    kwargs: dict = dict(dim=cfg.dim, modalities=cfg.modalities, seed=cfg.seed,
                        mask_ratio=cfg.mask_ratio)
    kwargs["pose_dim"] = sample.sequences["motion"].dim
    if "text" in cfg.modalities:
        kwargs["text_in_dim"] = sample.sequences["text"].dim
    if "video" in cfg.modalities:
        kwargs["video_in_dim"] = sample.sequences["video"].dim
    if "audio" in cfg.modalities:
        kwargs["audio_in_dim"] = sample.sequences["audio"].dim
    kwargs.update(overrides)
    return ModelConfig(**kwargs)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(out_dir: str | Path, model: MultiModalEmbedder,
                    optimizer: AdamW, epoch: int, rng: np.random.Generator,
                    loss_history: list[float], train_cfg: TrainConfig) -> Path:
    """One tensor file per parameter and optimizer moment, plus meta.json
    carrying epoch, RNG state and the config hash."""
    out = Path(out_dir)
    for sub in ("params", "adam_m", "adam_v"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    names = sorted(model.named_parameters())
    params = model.named_parameters()
    for name in names:
        write_tensor(out / "params" / f"{name}.mmrt", params[name].data)
        write_tensor(out / "adam_m" / f"{name}.mmrt", optimizer.m[name])
        write_tensor(out / "adam_v" / f"{name}.mmrt", optimizer.v[name])
    meta = {
        "epoch": epoch,
        "step_count": optimizer.step_count,
        "rng_state": rng.bit_generator.state,
        "loss_history": loss_history,
        "param_names": names,
        "model_config": model.config.to_dict(),
        "train_config": train_cfg.to_dict(),
        "config_hash": config_hash(model.config.to_dict(), train_cfg.to_dict()),
    }
    tmp = out / "meta.json.tmp"
    tmp.write_text(json.dumps(meta, indent=2))
    tmp.replace(out / "meta.json")
    return out


@dataclass
class Checkpoint:
    model_config: ModelConfig
    train_config: TrainConfig
    params: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    epoch: int
    step_count: int
    rng_state: dict
    loss_history: list[float]
    config_hash: str

    def build_model(self, dtype=np.float32) -> MultiModalEmbedder:
        model = MultiModalEmbedder(self.model_config, dtype=dtype)
        model.load_state(self.params)
        return model


def load_checkpoint(path: str | Path) -> Checkpoint:
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    names = meta["param_names"]
    return Checkpoint(
        model_config=ModelConfig.from_dict(meta["model_config"]),
        train_config=TrainConfig.from_dict(meta["train_config"]),
        params={n: read_tensor(path / "params" / f"{n}.mmrt") for n in names},
        adam_m={n: read_tensor(path / "adam_m" / f"{n}.mmrt") for n in names},
        adam_v={n: read_tensor(path / "adam_v" / f"{n}.mmrt") for n in names},
        epoch=meta["epoch"],
        step_count=meta["step_count"],
        rng_state=meta["rng_state"],
        loss_history=list(meta["loss_history"]),
        config_hash=meta["config_hash"],
    )


# ---------------------------------------------------------------------------
# the loop


@dataclass
class TrainResult:
    checkpoint_dir: Path
    loss_history: list[float]
    model: MultiModalEmbedder
    config: TrainConfig


def train(manifest: DatasetManifest | str | Path, cfg: TrainConfig,
          out_dir: str | Path, resume_from: str | Path | None = None,
          model_overrides: dict | None = None,
          log=None) -> TrainResult:
    """Deterministic given the seed: fixed iteration order, seeded per-epoch
    shuffling and masking, last incomplete batch dropped."""
    if not isinstance(manifest, DatasetManifest):
        manifest = load_manifest(manifest)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    lock = out / ".train.lock"
    try:
        lock.touch(exist_ok=False)
    except FileExistsError:
        raise TrainingError(f"output directory {out} is locked by another training run "
                            f"(remove {lock} if stale)")
    try:
        return _train_locked(manifest, cfg, out, resume_from, model_overrides or {}, log)
    finally:
        lock.unlink(missing_ok=True)


def _train_locked(manifest: DatasetManifest, cfg: TrainConfig, out: Path,
                  resume_from, model_overrides: dict, log) -> TrainResult:
    staged = stage_training_data(manifest, cfg.modalities)
    if staged.n < cfg.batch_size:
        raise TrainingError(f"train split has {staged.n} samples; "
                            f"batch size {cfg.batch_size} needs at least that many")

    if resume_from is not None:
        ckpt = load_checkpoint(resume_from)
        model = ckpt.build_model()
        optimizer = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
        optimizer.load_state(ckpt.adam_m, ckpt.adam_v, ckpt.step_count)
        rng = np.random.default_rng()
        rng.bit_generator.state = ckpt.rng_state
        start_epoch = ckpt.epoch
        history = ckpt.loss_history
    else:
        model_cfg = infer_model_config(manifest, cfg, **model_overrides)
        model = MultiModalEmbedder(model_cfg)
        optimizer = AdamW(model.named_parameters(), weight_decay=cfg.weight_decay)
        rng = np.random.default_rng(cfg.seed)
        start_epoch = 0
        history = []

    (out / "train_config.json").write_text(json.dumps(
        {"train": cfg.to_dict(), "model": model.config.to_dict(),
         "config_hash": config_hash(model.config.to_dict(), cfg.to_dict())}, indent=2))

    n_batches = staged.n // cfg.batch_size
    for epoch in range(start_epoch, cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = rng.permutation(staged.n)
        epoch_losses = []
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = {}
            for m in cfg.modalities:
                feats = Tensor(staged.features[m][idx])
                mask = None if staged.masks[m] is None else staged.masks[m][idx]
                batch[m] = (feats, mask)
            optimizer.zero_grad()
            with GradTape() as tape:
                loss, parts = model.training_loss(batch, rng,
                                                  lambda_recon=cfg.lambda_recon,
                                                  mask_ratio=cfg.mask_ratio)
                tape.backward(loss)
            optimizer.step(lr)
            model.temperature.clamp()
            epoch_losses.append(parts["total"])
        history.append(float(np.mean(epoch_losses)))
        if log is not None:
            log(f"epoch {epoch + 1}/{cfg.epochs}  lr {lr:.2e}  loss {history[-1]:.4f}")
        if cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(out / f"checkpoint_ep{epoch + 1}", model, optimizer,
                            epoch + 1, rng, history, cfg)

    ckpt_dir = save_checkpoint(out / "checkpoint", model, optimizer,
                               cfg.epochs, rng, history, cfg)
    return TrainResult(checkpoint_dir=ckpt_dir, loss_history=history,
                       model=model, config=cfg)
