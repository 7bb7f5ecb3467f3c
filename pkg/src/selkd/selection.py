"""Token scoring, median partitions, and the two distillation selectors.

Seven criteria score target tokens (sentence-level criteria broadcast one
score per sentence). A median partition splits the scored units into exact
complementary halves. Batch-level selection keeps the top-r% cross-entropy
tokens of the current batch; global-level selection thresholds against a
fixed-capacity FIFO queue of recent cross-entropies, which approximates the
corpus-wide distribution and damps batch-to-batch jitter.

All rules are rank-based: rescaling every score by a positive constant
changes nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .backend import kernels
from .data import TokenBatch, Vocab
from .errors import ContractError
from .losses import TeacherDistribution


class Criterion(str, Enum):
    SENTENCE_LENGTH = "sentence_length"
    WORD_FREQUENCY = "word_frequency"
    EMBEDDING_NORM = "embedding_norm"
    WORD_CE = "word_ce"
    SENTENCE_CE = "sentence_ce"
    TEACHER_P_GOLDEN = "teacher_p_golden"
    TEACHER_ENTROPY = "teacher_entropy"

    @property
    def sentence_level(self) -> bool:
        return self in (Criterion.SENTENCE_LENGTH, Criterion.SENTENCE_CE)

    @property
    def needs_teacher(self) -> bool:
        return self in (Criterion.TEACHER_P_GOLDEN, Criterion.TEACHER_ENTROPY)

    @property
    def needs_student_logits(self) -> bool:
        return self in (Criterion.WORD_CE, Criterion.SENTENCE_CE)

    @property
    def static(self) -> bool:
        """True when the score depends only on the data, not on model state."""
        return self in (Criterion.SENTENCE_LENGTH, Criterion.WORD_FREQUENCY)


@dataclass
class SelectionMask:
    mask: np.ndarray          # (B, T) bool, True only on valid positions
    threshold_used: float
    selected_count: int


@dataclass
class PartitionSpec:
    criterion: Criterion
    half: str  # "high" or "low"

    def __post_init__(self):
        self.criterion = Criterion(self.criterion)
        if self.half not in ("high", "low"):
            raise ContractError(f"partition half must be 'high' or 'low', got {self.half!r}")


class CEQueue:
    """Fixed-capacity FIFO ring of scalar cross-entropies.

    Pushing past capacity evicts the oldest values. Iteration (values())
    yields insertion order. State round-trips through snapshot()/restore()
    so training can resume exactly.
    """

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ContractError(f"queue capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.storage = np.zeros(capacity)
        self.head = 0  # next write slot
        self.count = 0

    def push_many(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size >= self.capacity:
            # only the newest `capacity` survive
            tail = values[-self.capacity :]
            self.storage[:] = tail
            self.head = 0
            self.count = self.capacity
            return
        n = values.size
        end = self.head + n
        if end <= self.capacity:
            self.storage[self.head : end] = values
        else:
            split = self.capacity - self.head
            self.storage[self.head :] = values[:split]
            self.storage[: end - self.capacity] = values[split:]
        self.head = end % self.capacity
        self.count = min(self.count + n, self.capacity)

    def values(self) -> np.ndarray:
        """Contents oldest to newest."""
        if self.count < self.capacity:
            return self.storage[: self.count].copy()
        return np.concatenate([self.storage[self.head :], self.storage[: self.head]])

    def snapshot(self) -> dict:
        return {"storage": self.storage.copy(), "head": self.head, "count": self.count}

    @classmethod
    def restore(cls, snap: dict) -> "CEQueue":
        q = cls(len(snap["storage"]))
        q.storage[:] = snap["storage"]
        q.head = int(snap["head"])
        q.count = int(snap["count"])
        return q


def score_tokens(criterion: Criterion, batch: TokenBatch,
                 student_logits: np.ndarray | None = None,
                 teacher: TeacherDistribution | None = None,
                 embeddings: np.ndarray | None = None,
                 vocab: Vocab | None = None) -> np.ndarray:
    """Score every target position of the batch under one criterion.

    Returns a (B, T) float matrix; values on pad positions are 0 and must
    be ignored via the batch's tgt_mask.
    """
    criterion = Criterion(criterion)
    valid = batch.tgt_mask
    if criterion.needs_teacher and teacher is None:
        raise ContractError(f"criterion {criterion.value} needs teacher distributions")
    if criterion.needs_student_logits and student_logits is None:
        raise ContractError(f"criterion {criterion.value} needs student logits")
    if criterion is Criterion.EMBEDDING_NORM and embeddings is None:
        raise ContractError("criterion embedding_norm needs the embedding table")
    if criterion is Criterion.WORD_FREQUENCY and vocab is None:
        raise ContractError("criterion word_frequency needs vocab counts")

    if criterion is Criterion.SENTENCE_LENGTH:
        scores = np.broadcast_to(
            batch.sentence_lengths[:, None].astype(np.float64), valid.shape
        ).copy()
    elif criterion is Criterion.WORD_FREQUENCY:
        scores = vocab.counts[batch.tgt_out_ids].astype(np.float64)
    elif criterion is Criterion.EMBEDDING_NORM:
        norms = np.sqrt((embeddings**2).sum(axis=1))
        scores = norms[batch.tgt_out_ids]
    elif criterion in (Criterion.WORD_CE, Criterion.SENTENCE_CE):
        scores = ce_scores(student_logits, batch.tgt_out_ids)
        if criterion is Criterion.SENTENCE_CE:
            tok = np.where(valid, scores, 0.0)
            denom = np.maximum(valid.sum(axis=1), 1)
            scores = np.broadcast_to((tok.sum(axis=1) / denom)[:, None], valid.shape).copy()
    elif criterion is Criterion.TEACHER_P_GOLDEN:
        scores = teacher.p_golden(batch.tgt_out_ids)
    else:  # TEACHER_ENTROPY
        scores = teacher.entropy()
    return np.where(valid, scores, 0.0)


def ce_scores(logits: np.ndarray, gold_ids: np.ndarray) -> np.ndarray:
    """Plain-array word cross-entropy, used for selection (no gradients)."""
    flat = np.ascontiguousarray(logits.reshape(-1, logits.shape[-1]))
    logp = kernels.log_softmax_fwd(flat).reshape(logits.shape)
    picked = np.take_along_axis(logp, gold_ids[..., None], axis=-1)[..., 0]
    return -picked


def median_partition(scores: np.ndarray, valid_mask: np.ndarray,
                     sentence_level: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Split valid units into complementary high/low halves at the median.

    Units are tokens, or whole sentences when sentence_level is set. Units
    are stably sorted by score (ties keep original order) and the top
    ceil(n/2) go high, so |high| - |low| is 0 or 1 regardless of ties.
    Returns boolean token masks (high, low) over the batch.
    """
    if sentence_level:
        rows_valid = valid_mask.any(axis=1)
        unit_scores = scores[:, 0][rows_valid]
        if unit_scores.size < 2:
            raise ContractError("median partition needs at least 2 valid units")
        high_units = median_split_units(unit_scores)
        high = np.zeros_like(valid_mask)
        row_ids = np.flatnonzero(rows_valid)
        for u, r in enumerate(row_ids):
            if high_units[u]:
                high[r] = valid_mask[r]
        low = valid_mask & ~high
        return high, low
    flat_idx = np.flatnonzero(valid_mask.reshape(-1))
    if flat_idx.size < 2:
        raise ContractError("median partition needs at least 2 valid units")
    unit_scores = scores.reshape(-1)[flat_idx]
    high_units = median_split_units(unit_scores)
    high = np.zeros(valid_mask.size, dtype=bool)
    high[flat_idx[high_units]] = True
    high = high.reshape(valid_mask.shape)
    return high, valid_mask & ~high


def median_split_units(unit_scores: np.ndarray) -> np.ndarray:
    """Boolean vector marking the top ceil(n/2) units by score, stable ties."""
    n = unit_scores.size
    order = np.argsort(-unit_scores, kind="stable")
    k = (n + 1) // 2
    out = np.zeros(n, dtype=bool)
    out[order[:k]] = True
    return out


def top_k_mask(scores_flat: np.ndarray, k: int) -> np.ndarray:
    """Top-k by value with earlier positions winning ties."""
    out = np.zeros(scores_flat.size, dtype=bool)
    if k > 0:
        order = np.argsort(-scores_flat, kind="stable")
        out[order[:k]] = True
    return out


def batch_level_select(word_ce_scores: np.ndarray, valid_mask: np.ndarray,
                       r: float) -> SelectionMask:
    """Select the ceil(r * M) largest-CE valid tokens of the batch."""
    if not 0.0 <= r <= 1.0:
        raise ContractError(f"distil rate r must be in [0, 1], got {r}")
    flat_idx = np.flatnonzero(valid_mask.reshape(-1))
    m = flat_idx.size
    k = math.ceil(r * m)
    sel = np.zeros(valid_mask.size, dtype=bool)
    if k > 0:
        ces = word_ce_scores.reshape(-1)[flat_idx]
        picked = top_k_mask(ces, k)
        sel[flat_idx[picked]] = True
        threshold = float(ces[picked].min())
    else:
        threshold = math.inf
    return SelectionMask(mask=sel.reshape(valid_mask.shape),
                         threshold_used=threshold, selected_count=k)


def queue_push_batch(queue: CEQueue, word_ce_scores: np.ndarray,
                     valid_mask: np.ndarray) -> CEQueue:
    """Push the batch's valid CEs in flat batch order; evict past capacity."""
    queue.push_many(word_ce_scores.reshape(-1)[valid_mask.reshape(-1)])
    return queue


def global_level_select(word_ce_scores: np.ndarray, valid_mask: np.ndarray,
                        queue: CEQueue, r: float) -> tuple[SelectionMask, CEQueue]:
    """Queue-thresholded selection: push the batch, then keep tokens whose
    CE reaches the ceil(r * count)-th largest value in the queue.

    During warm-up (queue not yet full) the rule runs over whatever is
    present, so capacity equal to the batch size degenerates to the
    batch-level rule.
    """
    if not 0.0 <= r <= 1.0:
        raise ContractError(f"distil rate r must be in [0, 1], got {r}")
    queue_push_batch(queue, word_ce_scores, valid_mask)
    k = math.ceil(r * queue.count)
    if k <= 0:
        sel = np.zeros_like(valid_mask)
        return SelectionMask(mask=sel, threshold_used=math.inf, selected_count=0), queue
    present = queue.storage[: queue.count] if queue.count < queue.capacity else queue.storage
    threshold = float(np.partition(present, queue.count - k)[queue.count - k])
    sel = (word_ce_scores >= threshold) & valid_mask
    return (
        SelectionMask(mask=sel, threshold_used=threshold, selected_count=int(sel.sum())),
        queue,
    )
