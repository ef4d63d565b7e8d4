"""Central finite-difference verification of the reverse-mode gradients.

The harness evaluates a scalar-valued function twice per sampled coordinate
(x +- h) in float64 and compares against the tape gradient. Relative error is
|analytic - fd| / max(|analytic|, |fd|, floor); the floor keeps the ratio
meaningful where the true gradient is ~0 and the comparison is effectively
absolute.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .autograd import GradTape, Tensor

DEFAULT_STEP = 1e-5
DEFAULT_RTOL = 1e-4
_REL_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    rtol: float
    coords_checked: int
    per_tensor: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_err <= self.rtol


def check_gradients(fn: Callable[[], Tensor],
                    wrt: dict[str, Tensor],
                    name: str = "fn",
                    step: float = DEFAULT_STEP,
                    rtol: float = DEFAULT_RTOL,
                    max_coords_per_tensor: int | None = 8,
                    rng: np.random.Generator | None = None) -> GradCheckResult:
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must rebuild the graph from ``wrt`` tensors on every call (their
    ``data`` buffers are perturbed in place). All tensors must be float64;
    float32 does not leave enough headroom below the 1e-4 tolerance.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for key, t in wrt.items():
        if t.data.dtype != np.float64:
            raise TypeError(f"gradient check requires float64 tensors; {key} is {t.data.dtype}")
        t.grad = None

    with GradTape() as tape:
        loss = fn()
        if loss.size != 1:
            raise ValueError(f"gradient check target must be scalar, got shape {loss.shape}")
        tape.backward(loss)
    analytic = {key: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for key, t in wrt.items()}

    worst = 0.0
    per_tensor: dict[str, float] = {}
    total = 0
    for key, t in wrt.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = rng.choice(n, size=max_coords_per_tensor, replace=False)
        else:
            coords = np.arange(n)
        tensor_worst = 0.0
        for c in coords:
            original = flat[c]
            flat[c] = original + step
            up = float(fn().data)
            flat[c] = original - step
            down = float(fn().data)
            flat[c] = original
            fd = (up - down) / (2.0 * step)
            an = float(analytic[key].reshape(-1)[c])
            err = abs(an - fd) / max(abs(an), abs(fd), _REL_FLOOR)
            tensor_worst = max(tensor_worst, err)
            total += 1
        per_tensor[key] = tensor_worst
        worst = max(worst, tensor_worst)
    return GradCheckResult(name=name, max_rel_err=worst, rtol=rtol,
                           coords_checked=total, per_tensor=per_tensor)


def run_suite(checks: Sequence[tuple[str, Callable[[], GradCheckResult]]],
              verbose: bool = True) -> list[GradCheckResult]:
    """Run named gradient checks, printing one pass/fail line each."""
    results = []
    for name, make in checks:
        start = time.perf_counter()
        result = make()
        result.name = name
        elapsed = time.perf_counter() - start
        if verbose:
            status = "PASS" if result.passed else "FAIL"
            print(f"[{status}] {name:<42s} max rel err {result.max_rel_err:.3e} "
                  f"({result.coords_checked} coords, {elapsed:.2f}s)")
        results.append(result)
    return results


def standard_checks() -> list[tuple[str, Callable[[], GradCheckResult]]]:
    """Finite-difference checks covering every differentiable operation, the
    encoders, the loss stack and the end-to-end total loss on tiny shapes.

    Imports live inside the builder to keep this module importable from the
    low-level kernels it verifies.
    """
    import numpy as np

    from . import autograd as ag
    from . import nn
    from .alignment import Temperature, contrastive_pair_loss, sequence_similarity
    from .audio import AudioCompressorConfig, Conv1dCompressor, MemoryCompressor
    from .model import ModelConfig, MultiModalEmbedder
    from .motion import BodyPartition, MotionEncoder, MotionEncoderConfig
    from .seq_encoders import SequenceEncoder, SequenceEncoderConfig

    def t(rng, *shape):
        return Tensor(rng.standard_normal(shape), requires_grad=True, dtype=np.float64)

    checks: list[tuple[str, Callable[[], GradCheckResult]]] = []

    def check_matmul():
        rng = np.random.default_rng(0)
        a, b = t(rng, 3, 4), t(rng, 4, 5)
        return check_gradients(lambda: ((a @ b) * (a @ b)).sum(), {"a": a, "b": b},
                               max_coords_per_tensor=None)

    def check_softmax():
        rng = np.random.default_rng(1)
        x = t(rng, 4, 6)
        w = rng.standard_normal((4, 6))
        return check_gradients(lambda: (ag.softmax(x, axis=1) * w).sum(), {"x": x},
                               max_coords_per_tensor=None)

    def check_masked_softmax():
        rng = np.random.default_rng(2)
        x = t(rng, 3, 5)
        mask = (rng.uniform(size=(3, 5)) > 0.3).astype(np.float64)
        mask[:, 0] = 1.0
        w = rng.standard_normal((3, 5))
        return check_gradients(lambda: (ag.softmax(x, axis=1, mask=mask) * w).sum(),
                               {"x": x}, max_coords_per_tensor=None)

    def check_attention():
        rng = np.random.default_rng(3)
        q, k, v = t(rng, 2, 4), t(rng, 3, 4), t(rng, 3, 4)

        def loss():
            out = nn.scaled_dot_attention(q, k, v)
            return (out * out).sum()

        return check_gradients(loss, {"q": q, "k": k, "v": v}, max_coords_per_tensor=None)

    def check_transformer_layer():
        rng = np.random.default_rng(4)
        layer = nn.TransformerLayer(8, heads=2, rng=rng, dtype=np.float64)
        x = t(rng, 4, 8)
        return check_gradients(lambda: (layer(x) * layer(x)).sum(),
                               {"x": x, **layer.named_parameters()},
                               max_coords_per_tensor=3, rng=rng)

    def check_layer_norm():
        rng = np.random.default_rng(5)
        ln = nn.LayerNorm(6, dtype=np.float64)
        x = t(rng, 3, 6)
        w = rng.standard_normal((3, 6))
        return check_gradients(lambda: (ln(x) * w).sum(),
                               {"x": x, **ln.named_parameters()},
                               max_coords_per_tensor=None)

    def check_avg_pool():
        rng = np.random.default_rng(6)
        x = t(rng, 2, 5, 3)
        return check_gradients(
            lambda: (nn.avg_pool_time(x) * nn.avg_pool_time(x)).sum(), {"x": x},
            max_coords_per_tensor=None)

    def check_gelu():
        rng = np.random.default_rng(7)
        x = t(rng, 4, 4)
        return check_gradients(lambda: (nn.gelu(x) * nn.gelu(x)).sum(), {"x": x},
                               max_coords_per_tensor=None)

    def check_max_reduce():
        rng = np.random.default_rng(8)
        x = t(rng, 4, 6)
        return check_gradients(lambda: (x.max(axis=1) * x.max(axis=1)).sum(), {"x": x},
                               max_coords_per_tensor=None)

    def check_l2_normalize():
        rng = np.random.default_rng(9)
        x = t(rng, 3, 5)
        w = rng.standard_normal((3, 5))
        return check_gradients(lambda: (nn.l2_normalize(x) * w).sum(), {"x": x},
                               max_coords_per_tensor=None)

    def make_similarity_check(aggregation):
        def check():
            rng = np.random.default_rng(10)
            x, y = t(rng, 2, 3, 4), t(rng, 3, 2, 4)
            wx = Tensor(np.full((2, 3), 1 / 3), requires_grad=True, dtype=np.float64)
            wy = Tensor(np.full((3, 2), 1 / 2), requires_grad=True, dtype=np.float64)

            def loss():
                s = sequence_similarity(x, wx, y, wy, aggregation)
                return (s * s).sum()

            return check_gradients(loss, {"x": x, "y": y, "wx": wx, "wy": wy},
                                   max_coords_per_tensor=4)
        return check

    def check_contrastive_loss():
        rng = np.random.default_rng(11)
        sim = t(rng, 4, 4)
        tau = Temperature(0.7, dtype=np.float64)
        return check_gradients(lambda: contrastive_pair_loss(sim, tau),
                               {"sim": sim, "tau": tau.value}, max_coords_per_tensor=None)

    def check_memory_compressor():
        rng = np.random.default_rng(12)
        comp = MemoryCompressor(AudioCompressorConfig(in_dim=4, dim=6, out_len=2,
                                                      memory_slots=3), rng, dtype=np.float64)
        x = t(rng, 1, 5, 4)
        target = rng.standard_normal((1, 2, 6))

        def loss():
            diff = comp(x) - target
            return (diff * diff).sum()

        return check_gradients(loss, {"x": x, **comp.named_parameters()},
                               max_coords_per_tensor=3, rng=rng)

    def check_conv_compressor():
        rng = np.random.default_rng(13)
        comp = Conv1dCompressor(AudioCompressorConfig(in_dim=3, dim=4, out_len=2),
                                rng, dtype=np.float64)
        x = t(rng, 1, 7, 3)
        return check_gradients(lambda: (comp(x) * comp(x)).sum(),
                               {"x": x, **comp.named_parameters()},
                               max_coords_per_tensor=3, rng=rng)

    def check_motion_encoder():
        rng = np.random.default_rng(14)
        enc = MotionEncoder(MotionEncoderConfig(pose_dim=8, dim=8, stages=1, heads=2,
                                                partition=BodyPartition.equal_slices(8, 2)),
                            rng, dtype=np.float64)
        x = t(rng, 2, 4, 8)
        target = rng.standard_normal((2, 4, 8))

        def loss():
            diff = enc(x) - target
            return (diff * diff).sum()

        return check_gradients(loss, {"x": x, **enc.named_parameters()},
                               max_coords_per_tensor=2, rng=rng)

    def check_text_encoder():
        rng = np.random.default_rng(15)
        enc = SequenceEncoder(SequenceEncoderConfig("text", 6, 8, layers=1, heads=2),
                              rng, dtype=np.float64)
        x = t(rng, 2, 3, 6)
        target = rng.standard_normal((2, 3, 8))

        def loss():
            diff = enc(x) - target
            return (diff * diff).sum()

        return check_gradients(loss, {"x": x, **enc.named_parameters()},
                               max_coords_per_tensor=2, rng=rng)

    def check_total_loss():
        rng = np.random.default_rng(16)
        model = MultiModalEmbedder(ModelConfig(
            dim=16, heads=2, pose_dim=8, body_partition=False, motion_stages=1,
            text_in_dim=12, text_layers=1, video_in_dim=12, video_layers=1,
            audio_in_dim=12, audio_out_len=4, audio_memory_slots=4,
            fusion_layers=1, seed=0), dtype=np.float64)
        lengths = {"motion": 4, "text": 3, "video": 3, "audio": 6}
        dims = {"motion": 8, "text": 12, "video": 12, "audio": 12}
        batch = {m: (Tensor(rng.standard_normal((2, lengths[m], dims[m])),
                            dtype=np.float64), None)
                 for m in lengths}

        def loss():
            total, _ = model.training_loss(batch, np.random.default_rng(5),
                                           lambda_recon=0.1, mask_ratio=0.5)
            return total

        return check_gradients(loss, model.named_parameters(),
                               max_coords_per_tensor=1, rng=rng)

    checks.extend([
        ("matmul", check_matmul),
        ("softmax", check_softmax),
        ("softmax (masked)", check_masked_softmax),
        ("scaled_dot_attention", check_attention),
        ("transformer_layer", check_transformer_layer),
        ("layer_norm", check_layer_norm),
        ("avg_pool_time", check_avg_pool),
        ("gelu", check_gelu),
        ("max reduction", check_max_reduce),
        ("l2_normalize", check_l2_normalize),
        ("sequence_similarity (max)", make_similarity_check("max")),
        ("sequence_similarity (mean)", make_similarity_check("mean")),
        ("contrastive_pair_loss + temperature", check_contrastive_loss),
        ("audio memory compressor", check_memory_compressor),
        ("audio conv1d compressor", check_conv_compressor),
        ("motion encoder", check_motion_encoder),
        ("text encoder head", check_text_encoder),
        ("end-to-end total loss", check_total_loss),
    ])
    return checks
