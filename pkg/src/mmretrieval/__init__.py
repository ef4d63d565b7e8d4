"""Fine-grained multi-modal motion retrieval.

Token-level contrastive alignment of motion, text, video and audio in one
joint embedding space, with a persistent exact-scoring retrieval engine and
the evaluation protocols used to report R@K / MedR.
"""

from .alignment import SimilarityMatrix, Temperature, fine_similarity, similarity_matrix
from .autograd import GradTape, NumericsError, ShapeError, Tensor
from .data import (
    DatasetManifest,
    PairedSample,
    SyntheticConfig,
    TokenSequence,
    generate_synthetic_dataset,
    load_manifest,
)
from .engine import GalleryIndex, RankingResult, build_index
from .evaluation import EvalReport, ProtocolConfig, evaluate, median_rank, recall_at_k
from .model import ModelConfig, MultiModalEmbedder
from .tensorfile import read_tensor, write_tensor
from .trainer import Checkpoint, TrainConfig, load_checkpoint, train

__version__ = "0.1.0"

__all__ = [
    "Checkpoint",
    "DatasetManifest",
    "EvalReport",
    "GalleryIndex",
    "GradTape",
    "ModelConfig",
    "MultiModalEmbedder",
    "NumericsError",
    "PairedSample",
    "ProtocolConfig",
    "RankingResult",
    "ShapeError",
    "SimilarityMatrix",
    "SyntheticConfig",
    "Temperature",
    "Tensor",
    "TokenSequence",
    "TrainConfig",
    "__version__",
    "build_index",
    "evaluate",
    "fine_similarity",
    "generate_synthetic_dataset",
    "load_checkpoint",
    "load_manifest",
    "median_rank",
    "read_tensor",
    "recall_at_k",
    "similarity_matrix",
    "train",
    "write_tensor",
]
