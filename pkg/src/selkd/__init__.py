"""selkd: a desk-scale seq2seq training engine with selective word-level
knowledge distillation.

Layers, bottom up: a tape-based autodiff core over float64 numpy arrays
(hot kernels dispatch to numba or numpy via SELKD_BACKEND), a small
encoder-decoder transformer, synthetic parallel corpora, the distillation
objectives, cross-entropy-based token selection (batch-level and
FIFO-queue global), analysis diagnostics, and an experiment harness + CLI.
"""

from .backend import active_backend
from .data import ParallelCorpus, TaskSpec, TokenBatch, Vocab
from .harness import ExperimentConfig, RunRecord
from .model import Hypothesis, ModelParams, TransformerConfig
from .selection import CEQueue, Criterion, PartitionSpec, SelectionMask
from .tensor import Tape, Tensor

__version__ = "0.1.0"

__all__ = [
    "active_backend",
    "CEQueue",
    "Criterion",
    "ExperimentConfig",
    "Hypothesis",
    "ModelParams",
    "ParallelCorpus",
    "PartitionSpec",
    "RunRecord",
    "SelectionMask",
    "Tape",
    "TaskSpec",
    "Tensor",
    "TokenBatch",
    "TransformerConfig",
    "Vocab",
    "__version__",
]
