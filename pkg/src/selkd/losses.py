"""Training objectives.

Per-token cross-entropy against the gold label, per-token cross-entropy
against a frozen teacher distribution, and the combined objective that adds
the teacher term only on selected tokens:

    loss = mean over valid tokens of [ ce + alpha * kd * selected ]

With every valid token selected this is plain word-level distillation; with
nothing selected it is the baseline objective. All values are in nats and
reductions are token means, so losses are comparable across batch sizes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import ParallelCorpus
from .errors import ContractError, DataError
from .model import ModelParams, beam_search, greedy_decode_batch
from .tensor import Tensor, gather_last, log_softmax, mul, neg, tensor_sum


@dataclass
class PerTokenLoss:
    ce: Tensor            # (B, T), zero on pad positions, differentiable
    valid: np.ndarray     # (B, T) bool


@dataclass
class TeacherDistribution:
    """Per-position probability rows from a frozen teacher (no gradients)."""

    probs: np.ndarray     # (B, T, V)

    def check_rows(self, valid: np.ndarray, tol: float = 1e-4) -> None:
        sums = self.probs.sum(axis=-1)
        bad = np.abs(sums - 1.0) > tol
        bad &= valid
        if bad.any():
            b, t = np.argwhere(bad)[0]
            raise DataError(
                f"teacher row ({b}, {t}) sums to {sums[b, t]:.6f}, not a distribution"
            )

    def p_golden(self, gold_ids: np.ndarray) -> np.ndarray:
        return np.take_along_axis(self.probs, gold_ids[..., None], axis=-1)[..., 0]

    def entropy(self) -> np.ndarray:
        p = self.probs
        with np.errstate(divide="ignore", invalid="ignore"):
            plogp = np.where(p > 0.0, p * np.log(p), 0.0)
        return -plogp.sum(axis=-1)


def word_ce(student_logits: Tensor, tgt_out_ids: np.ndarray,
            valid_mask: np.ndarray) -> PerTokenLoss:
    """Negative log-likelihood of the gold token at every valid position."""
    if student_logits.shape[:2] != tgt_out_ids.shape:
        raise ContractError(
            f"logits {student_logits.shape} do not cover targets {tgt_out_ids.shape}"
        )
    logp = log_softmax(student_logits)
    picked = gather_last(logp, tgt_out_ids)
    ce = mul(neg(picked), Tensor(valid_mask.astype(np.float64)))
    return PerTokenLoss(ce=ce, valid=valid_mask)


def word_kd(student_logits: Tensor, teacher: TeacherDistribution,
            valid_mask: np.ndarray) -> Tensor:
    """Cross-entropy of the student against teacher rows, per token.

    Gradients flow only into the student logits; teacher rows are plain
    arrays.
    """
    teacher.check_rows(valid_mask)
    logp = log_softmax(student_logits)
    kd = neg(tensor_sum(mul(logp, Tensor(teacher.probs)), axis=-1))
    return mul(kd, Tensor(valid_mask.astype(np.float64)))


def combined_objective(ce: PerTokenLoss, kd: Tensor | None, sel_mask: np.ndarray,
                       alpha: float) -> Tensor:
    """Token-mean of ce plus alpha * kd gated by the selection mask."""
    if alpha < 0:
        raise ContractError(f"alpha must be >= 0, got {alpha}")
    if np.logical_and(sel_mask, ~ce.valid).any():
        b, t = np.argwhere(sel_mask & ~ce.valid)[0]
        raise ContractError(f"selection mask marks pad position ({b}, {t})")
    n_valid = float(ce.valid.sum())
    if n_valid == 0:
        raise ContractError("batch has no valid tokens")
    loss = mul(tensor_sum(ce.ce), 1.0 / n_valid)
    if alpha > 0.0 and sel_mask.any():
        if kd is None:
            raise ContractError("kd matrix required when alpha > 0 and tokens are selected")
        gated = mul(kd, Tensor(sel_mask.astype(np.float64)))
        loss = loss + mul(tensor_sum(gated), alpha / n_valid)
    return loss


def smoothed_ce_adjustment(student_logits: Tensor, valid_mask: np.ndarray,
                           smoothing: float) -> Tensor:
    """Uniform-smoothing correction term: mean over valid of -mean_k log p_k.

    Training with (1 - smoothing) * ce_mean + smoothing * this term equals
    cross-entropy against the smoothed target distribution, while the raw
    ce stays available for selection.
    """
    logp = log_softmax(student_logits)
    per_tok = neg(tensor_mean_last(logp))
    gated = mul(per_tok, Tensor(valid_mask.astype(np.float64)))
    return mul(tensor_sum(gated), 1.0 / float(valid_mask.sum()))


def tensor_mean_last(t: Tensor) -> Tensor:
    return mul(tensor_sum(t, axis=-1), 1.0 / float(t.shape[-1]))


def seq_kd_distill(teacher: ModelParams, corpus: ParallelCorpus, beam: int = 4,
                   length_penalty: float = 0.0, log=None) -> ParallelCorpus:
    """Replace corpus targets with the teacher's decoded outputs.

    Training on the result with plain cross-entropy distills the teacher at
    the sequence level; the selective word-level objective composes on top.
    Decoding falls back to greedy when a beam result is empty, and to the
    original target if greedy is empty too (both logged).
    """
    new_pairs = []
    if beam == 1:
        src_batches = _batched_sources(teacher, corpus)
        hyps = []
        for ids, mask in src_batches:
            hyps.extend(greedy_decode_batch(teacher, ids, mask))
    else:
        hyps = [beam_search(teacher, src, beam, length_penalty) for src, _ in corpus.pairs]
    for (src, tgt), hyp in zip(corpus.pairs, hyps):
        content = hyp.content
        if not content:
            fallback = greedy_decode_batch(
                teacher,
                np.asarray([src], dtype=np.int64),
                np.ones((1, len(src)), dtype=bool),
            )[0].content
            if log:
                log(f"empty beam output for source {src}; greedy fallback")
            content = fallback if fallback else list(tgt)
        new_pairs.append((list(src), [int(x) for x in content]))
    return ParallelCorpus(pairs=new_pairs, spec=corpus.spec)


def _batched_sources(teacher: ModelParams, corpus: ParallelCorpus, chunk: int = 64):
    from .model import PAD

    for lo in range(0, len(corpus.pairs), chunk):
        block = corpus.pairs[lo : lo + chunk]
        s = max(len(src) for src, _ in block)
        ids = np.full((len(block), s), PAD, dtype=np.int64)
        mask = np.zeros((len(block), s), dtype=bool)
        for r, (src, _) in enumerate(block):
            ids[r, : len(src)] = src
            mask[r, : len(src)] = True
        yield ids, mask
