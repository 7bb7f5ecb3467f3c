"""Analysis instruments: logit-gradient agreement, teacher-entropy
histograms, and selection-threshold traces.

The two per-token logit gradients have closed forms: softmax(l) minus the
one-hot gold for the gold cross-entropy, and softmax(l) minus the teacher
row for the distillation term. Agreement between them is judged by the
sign of their cosine; tokens where either gradient is numerically zero are
excluded because direction is undefined there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

ZERO_NORM = 1e-12


@dataclass
class AgreementStats:
    step: int
    group: str  # "hard", "easy", or "all"
    agree_count: int
    total_count: int

    @property
    def rate(self) -> float:
        return self.agree_count / self.total_count


@dataclass
class EntropyHistogram:
    bin_edges: np.ndarray
    counts: dict[str, np.ndarray]  # group -> per-bin counts


def logit_grad_ce(student_probs: np.ndarray, gold_id: int) -> np.ndarray:
    """d(word cross-entropy)/d(logits) for one token: p - onehot(gold)."""
    g = student_probs.astype(np.float64).copy()
    g[gold_id] -= 1.0
    return g


def logit_grad_kd(student_probs: np.ndarray, teacher_probs: np.ndarray) -> np.ndarray:
    """d(distillation cross-entropy)/d(logits) for one token: p - q."""
    return student_probs.astype(np.float64) - teacher_probs


def direction_agreement_rate(student_probs: np.ndarray, gold_ids: np.ndarray,
                             teacher_probs: np.ndarray, group_mask: np.ndarray,
                             step: int = 0, group: str = "all",
                             mode: str = "cosine") -> AgreementStats:
    """Fraction of group tokens whose two logit gradients point the same way.

    mode "cosine": agree iff the cosine of the two gradients is positive.
    mode "sign_vote": agree iff more than half of the nonzero components
    share their sign. Zero-gradient tokens are excluded from the total.
    """
    if mode not in ("cosine", "sign_vote"):
        raise ContractError(f"unknown agreement mode {mode!r}")
    if not group_mask.any():
        raise ContractError(f"agreement group {group!r} is empty")
    idx = np.argwhere(group_mask)
    agree = total = 0
    for b, t in idx:
        p = student_probs[b, t]
        gce = logit_grad_ce(p, int(gold_ids[b, t]))
        gkd = logit_grad_kd(p, teacher_probs[b, t])
        nce = np.linalg.norm(gce)
        nkd = np.linalg.norm(gkd)
        if nce < ZERO_NORM or nkd < ZERO_NORM:
            continue
        total += 1
        if mode == "cosine":
            if float(gce @ gkd) > 0.0:
                agree += 1
        else:
            signs = np.sign(gce) * np.sign(gkd)
            considered = signs != 0
            if considered.any() and (signs > 0).sum() > considered.sum() / 2:
                agree += 1
    if total == 0:
        raise ContractError(f"agreement group {group!r} has no nonzero-gradient tokens")
    return AgreementStats(step=step, group=group, agree_count=agree, total_count=total)


def entropy_histogram(teacher_probs: np.ndarray, group_masks: dict[str, np.ndarray],
                      bins: int | np.ndarray = 20,
                      max_tokens: int = 10_000, rng=None) -> EntropyHistogram:
    """Histogram of per-token teacher entropy for each group of tokens."""
    if np.isscalar(bins) and bins < 1:
        raise ContractError("bins must be >= 1")
    p = teacher_probs
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0.0, p * np.log(p), 0.0)
    ent = -plogp.sum(axis=-1)
    if np.isscalar(bins):
        hi = max(float(np.log(p.shape[-1])), float(ent.max()), 1e-9)
        edges = np.linspace(0.0, hi, int(bins) + 1)
    else:
        edges = np.asarray(bins, dtype=np.float64)
    counts = {}
    for name, mask in group_masks.items():
        vals = ent[mask]
        if rng is not None and vals.size > max_tokens:
            vals = rng.choice(vals, size=max_tokens, replace=False)
        counts[name] = np.histogram(vals, bins=edges)[0]
    return EntropyHistogram(bin_edges=edges, counts=counts)


@dataclass
class ThresholdTrace:
    """Append-only per-step record of selection thresholds by strategy."""

    records: dict[str, list[tuple[int, float]]] = field(default_factory=dict)

    def record(self, step: int, strategy: str, threshold: float) -> None:
        rows = self.records.setdefault(strategy, [])
        if rows and step <= rows[-1][0]:
            raise ContractError(
                f"threshold trace steps must increase per strategy, got {step} "
                f"after {rows[-1][0]}"
            )
        rows.append((step, float(threshold)))

    def summary(self, window: int = 200) -> dict[str, float]:
        """Population std of the last `window` thresholds per strategy."""
        out = {}
        for strategy, rows in self.records.items():
            vals = np.asarray([v for _, v in rows[-window:]])
            out[strategy] = float(vals.std()) if vals.size else float("nan")
        return out

    def window_stds(self, window: int = 200) -> dict[str, list[float]]:
        """Std over consecutive non-overlapping windows, per strategy."""
        out = {}
        for strategy, rows in self.records.items():
            vals = np.asarray([v for _, v in rows])
            stds = [
                float(vals[lo : lo + window].std())
                for lo in range(0, vals.size - window + 1, window)
            ]
            out[strategy] = stds
        return out
