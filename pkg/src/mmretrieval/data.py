"""Dataset manifests, paired samples and the synthetic paired-data generator.

A manifest is newline-delimited JSON, one record per sample:

    {"id": "s0007", "split": "train", "motion": "feats/s0007_motion.mmrt",
     "text": "feats/s0007_text.mmrt", ...}

Paths are relative to the manifest file. Motion is required on every record;
text/video/audio are optional. The synthetic generator renders every modality
of a sample from one shared latent vector, so the identity pairing is the
unique similarity maximizer in latent space and desk-scale end-to-end
training can be verified without any real dataset.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tensorfile import read_tensor, write_tensor

MODALITIES = ("motion", "text", "video", "audio")


class ManifestError(ValueError):
    pass


@dataclass
class TokenSequence:
    """One sample in one modality: (L, C) feature tokens plus validity mask."""

    tokens: np.ndarray
    mask: np.ndarray | None = None
    unit_norm: bool = False

    def __post_init__(self):
        if self.tokens.ndim != 2:
            raise ManifestError(f"token sequence must be 2-D, got {self.tokens.shape}")
        if self.mask is not None and len(self.mask) != len(self.tokens):
            raise ManifestError("mask length != token count")

    @property
    def length(self) -> int:
        return self.tokens.shape[0]

    @property
    def dim(self) -> int:
        return self.tokens.shape[1]

    def valid_mask(self) -> np.ndarray:
        if self.mask is None:
            return np.ones(self.length, dtype=bool)
        return np.asarray(self.mask, dtype=bool)


@dataclass
class ManifestRecord:
    id: str
    split: str
    paths: dict[str, str]


@dataclass
class PairedSample:
    id: str
    split: str
    sequences: dict[str, TokenSequence] = field(default_factory=dict)


@dataclass
class DatasetManifest:
    root: Path
    records: list[ManifestRecord]

    def split(self, name: str) -> list[ManifestRecord]:
        return [r for r in self.records if r.split == name]

    def modalities(self) -> tuple[str, ...]:
        present = set(MODALITIES)
        for r in self.records:
            present &= set(r.paths)
        return tuple(m for m in MODALITIES if m in present)

    def load_sample(self, record: ManifestRecord,
                    modalities: tuple[str, ...] | None = None) -> PairedSample:
        wanted = modalities if modalities is not None else tuple(record.paths)
        sample = PairedSample(id=record.id, split=record.split)
        for modality in wanted:
            if modality not in record.paths:
                raise ManifestError(f"sample {record.id} has no {modality} file")
            arr = read_tensor(self.root / record.paths[modality])
            sample.sequences[modality] = TokenSequence(tokens=arr)
        return sample


def write_manifest(path: str | Path, records: list[ManifestRecord]) -> None:
    path = Path(path)
    lines = []
    for r in records:
        row = {"id": r.id, "split": r.split}
        row.update(r.paths)
        lines.append(json.dumps(row, sort_keys=True))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path: str | Path, validate: bool = True) -> DatasetManifest:
    """Parse a manifest; rejects duplicate ids, missing motion entries and
    dangling or unparsable tensor paths, naming the offending record."""
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    records: list[ManifestRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}:{lineno}: invalid record: {exc}") from exc
        try:
            sample_id, split = row.pop("id"), row.pop("split")
        except KeyError as exc:
            raise ManifestError(f"{path}:{lineno}: record missing {exc}") from exc
        if split not in ("train", "test"):
            raise ManifestError(f"{path}:{lineno}: unknown split {split!r}")
        if sample_id in seen:
            raise ManifestError(f"{path}:{lineno}: duplicate id {sample_id!r}")
        seen.add(sample_id)
        paths = {m: p for m, p in row.items() if m in MODALITIES}
        if "motion" not in paths:
            raise ManifestError(f"{path}:{lineno}: sample {sample_id!r} lacks required motion path")
        records.append(ManifestRecord(id=sample_id, split=split, paths=paths))
    manifest = DatasetManifest(root=path.parent, records=records)
    if validate:
        for r in records:
            for modality, rel in r.paths.items():
                target = manifest.root / rel
                if not target.exists():
                    raise ManifestError(f"sample {r.id!r}: dangling {modality} path {rel}")
                read_tensor(target)  # raises TensorFormatError on corruption
    return manifest


# ---------------------------------------------------------------------------
# synthetic paired data


@dataclass
class SyntheticConfig:
    """Desk-scale stand-in for a real multi-modal paired dataset.

    Every sample draws one latent concept vector; each modality renders the
    latent's segments through a fixed random linear map, token t reading
    segment ``t % segments``. Matched modalities therefore share the latent,
    mismatched ones do not.
    """

    n: int = 64
    modalities: tuple[str, ...] = MODALITIES
    latent_dim: int = 16
    segments: int = 4
    lengths: dict[str, int] = field(default_factory=lambda: {
        "motion": 16, "text": 8, "video": 8, "audio": 24})
    feature_dims: dict[str, int] = field(default_factory=lambda: {
        "motion": 48, "text": 64, "video": 64, "audio": 64})
    noise: float = 0.05
    seed: int = 0
    test_fraction: float = 0.2

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least 2 samples for contrastive pairs")
        if self.noise < 0:
            raise ValueError("noise sigma must be non-negative")
        if self.latent_dim % self.segments:
            raise ValueError("latent_dim must be divisible by segments")


@dataclass
class SyntheticDataset:
    manifest_path: Path
    latents: np.ndarray                      # (n, latent_dim)
    renders: dict[str, np.ndarray]           # modality -> (segments, C_in, seg_len)
    config: SyntheticConfig


def generate_synthetic_dataset(out_dir: str | Path, config: SyntheticConfig) -> SyntheticDataset:
    """Write tensor files plus manifest; same seed gives byte-identical output."""
    out = Path(out_dir)
    (out / "feats").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(config.seed)
    seg_len = config.latent_dim // config.segments

    renders: dict[str, np.ndarray] = {}
    for modality in config.modalities:
        c_in = config.feature_dims[modality]
        renders[modality] = rng.standard_normal(
            (config.segments, c_in, seg_len)) / np.sqrt(seg_len)

    latents = rng.standard_normal((config.n, config.latent_dim))
    n_test = int(round(config.n * config.test_fraction))
    records: list[ManifestRecord] = []
    for i in range(config.n):
        sample_id = f"s{i:04d}"
        split = "test" if i >= config.n - n_test else "train"
        z = latents[i].reshape(config.segments, seg_len)
        paths: dict[str, str] = {}
        for modality in config.modalities:
            length = config.lengths[modality]
            seg_idx = np.arange(length) % config.segments
            clean = np.einsum("tcs,ts->tc", renders[modality][seg_idx], z[seg_idx])
            noisy = clean + config.noise * rng.standard_normal(clean.shape)
            rel = f"feats/{sample_id}_{modality}.mmrt"
            write_tensor(out / rel, noisy.astype(np.float32))
            paths[modality] = rel
        records.append(ManifestRecord(id=sample_id, split=split, paths=paths))

    manifest_path = out / "manifest.jsonl"
    write_manifest(manifest_path, records)
    write_tensor(out / "_latents.mmrt", latents.astype(np.float32))
    return SyntheticDataset(manifest_path=manifest_path, latents=latents,
                            renders=renders, config=config)
