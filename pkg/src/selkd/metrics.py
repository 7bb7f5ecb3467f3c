"""Translation metrics over integer token sequences.

Corpus BLEU follows the clipped modified-precision formula with geometric
mean over n-gram orders and the brevity penalty. Desk-scale sentences are
short, so add-one smoothing on orders >= 2 is on by default; switch it off
to match unsmoothed reference scores exactly.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass

import numpy as np

from . import rng as rng_mod
from .errors import ContractError


@dataclass
class BleuReport:
    score: float
    precisions: list[float]
    brevity_penalty: float
    candidate_length: int
    reference_length: int


def _ngram_counts(seq, n: int) -> Counter:
    return Counter(tuple(seq[i : i + n]) for i in range(len(seq) - n + 1))


def _pair_stats(cand, ref, max_n: int):
    """Clipped match and total counts per order, plus lengths."""
    matches = []
    totals = []
    for n in range(1, max_n + 1):
        cc = _ngram_counts(cand, n)
        rc = _ngram_counts(ref, n)
        matches.append(sum(min(c, rc[g]) for g, c in cc.items()))
        totals.append(max(len(cand) - n + 1, 0))
    return matches, totals, len(cand), len(ref)


def _bleu_from_stats(matches, totals, cand_len, ref_len, max_n, smoothing) -> BleuReport:
    precisions = []
    for n in range(max_n):
        m, t = matches[n], totals[n]
        if smoothing and n >= 1:
            m, t = m + 1, t + 1
        precisions.append(m / t if t > 0 else 0.0)
    if cand_len == 0 or any(p == 0.0 for p in precisions):
        bp = 0.0 if cand_len == 0 else (
            1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
        )
        return BleuReport(0.0, precisions, bp, cand_len, ref_len)
    log_avg = sum(math.log(p) for p in precisions) / max_n
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return BleuReport(100.0 * bp * math.exp(log_avg), precisions, bp, cand_len, ref_len)


def bleu(candidates, references, max_n: int = 4, smoothing: bool = True) -> BleuReport:
    """Corpus BLEU over parallel lists of token sequences."""
    if len(candidates) == 0:
        raise ContractError("bleu needs at least one candidate")
    if len(candidates) != len(references):
        raise ContractError(
            f"candidate/reference counts differ: {len(candidates)} vs {len(references)}"
        )
    if any(len(r) == 0 for r in references):
        raise ContractError("references must be non-empty")
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for cand, ref in zip(candidates, references):
        m, t, cl, rl = _pair_stats(list(cand), list(ref), max_n)
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        cand_len += cl
        ref_len += rl
    return _bleu_from_stats(matches, totals, cand_len, ref_len, max_n, smoothing)


def token_accuracy(logits: np.ndarray, gold_ids: np.ndarray,
                   valid_mask: np.ndarray) -> float:
    """Fraction of valid positions where argmax(logits) hits the gold id."""
    if logits.shape[:2] != gold_ids.shape:
        raise ContractError(f"logits {logits.shape} do not cover gold {gold_ids.shape}")
    pred = logits.argmax(axis=-1)
    hits = (pred == gold_ids) & valid_mask
    total = valid_mask.sum()
    return float(hits.sum() / total) if total else 0.0


def paired_bootstrap(cands_a, cands_b, refs, n_resamples: int = 1000,
                     seed: int = 0, max_n: int = 4, smoothing: bool = True) -> float:
    """Koehn-style significance test of system b against system a.

    Resamples sentences with replacement; returns the fraction of resamples
    where corpus BLEU(b) >= BLEU(a). Deterministic under the seed.
    """
    if n_resamples < 100:
        raise ContractError(f"n_resamples must be >= 100, got {n_resamples}")
    if not (len(cands_a) == len(cands_b) == len(refs)):
        raise ContractError("paired_bootstrap needs equal-length lists")
    n = len(refs)
    stats_a = [_pair_stats(list(c), list(r), max_n) for c, r in zip(cands_a, refs)]
    stats_b = [_pair_stats(list(c), list(r), max_n) for c, r in zip(cands_b, refs)]
    rng = rng_mod.rng_for(seed, rng_mod.BOOTSTRAP)
    wins = 0
    for _ in range(n_resamples):
        idx = rng.integers(0, n, size=n)
        sa = _sum_stats(stats_a, idx, max_n)
        sb = _sum_stats(stats_b, idx, max_n)
        if _bleu_from_stats(*sb, max_n, smoothing).score >= _bleu_from_stats(
            *sa, max_n, smoothing
        ).score:
            wins += 1
    return wins / n_resamples


def _sum_stats(stats, idx, max_n):
    matches = [0] * max_n
    totals = [0] * max_n
    cand_len = ref_len = 0
    for i in idx:
        m, t, cl, rl = stats[i]
        matches = [a + b for a, b in zip(matches, m)]
        totals = [a + b for a, b in zip(totals, t)]
        cand_len += cl
        ref_len += rl
    return matches, totals, cand_len, ref_len
