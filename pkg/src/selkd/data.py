"""Synthetic parallel corpora with controllable difficulty.

Token ids 0/1/2 are reserved (start/end/pad); real tokens occupy [3, vocab).
Source tokens are drawn from a Zipf distribution over the real ids, targets
derive from the source by task kind, and an optional noise rate replaces
target tokens uniformly at random to create genuinely hard positions.
Corpus generation is a pure function of (spec, n_pairs).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .errors import ConfigError, ContractError
from .model import BOS, EOS, PAD

TASK_KINDS = ("copy", "reverse", "lexicon_reorder")
N_RESERVED = 3


@dataclass(frozen=True)
class TaskSpec:
    kind: str = "lexicon_reorder"
    vocab_size: int = 64
    len_min: int = 4
    len_max: int = 12
    zipf_s: float = 1.1
    noise_rate: float = 0.0
    seed: int = 0

    def validate(self) -> "TaskSpec":
        if self.kind not in TASK_KINDS:
            raise ConfigError(f"task kind must be one of {TASK_KINDS}, got {self.kind!r}")
        if self.vocab_size < 8:
            raise ConfigError("vocab_size must be >= 8")
        if not 1 <= self.len_min <= self.len_max:
            raise ConfigError("need 1 <= len_min <= len_max")
        if self.zipf_s < 0:
            raise ConfigError("zipf_s must be >= 0")
        if not 0.0 <= self.noise_rate < 1.0:
            raise ConfigError("noise_rate must be in [0, 1)")
        return self


@dataclass
class ParallelCorpus:
    pairs: list[tuple[list[int], list[int]]]
    spec: TaskSpec


@dataclass
class Vocab:
    """Target-side token statistics for the frequency criterion."""

    size: int
    counts: np.ndarray  # occurrence count per id over the training targets

    def freq(self, token_id: int) -> int:
        if 0 <= token_id < self.size:
            return int(self.counts[token_id])
        return 0


@dataclass
class TokenBatch:
    src_ids: np.ndarray      # (B, S) int64, PAD-padded
    tgt_in_ids: np.ndarray   # (B, T) starts with BOS
    tgt_out_ids: np.ndarray  # (B, T) ends with EOS; tgt_in shifted left
    src_mask: np.ndarray     # (B, S) bool, True on real tokens
    tgt_mask: np.ndarray     # (B, T) bool
    sentence_lengths: np.ndarray  # (B,) target content length
    pair_ids: np.ndarray     # (B,) index of each row in the source corpus

    @property
    def n_valid_tokens(self) -> int:
        return int(self.tgt_mask.sum())


def _zipf_probs(spec: TaskSpec) -> np.ndarray:
    k = spec.vocab_size - N_RESERVED
    ranks = np.arange(1, k + 1, dtype=np.float64)
    w = ranks ** -spec.zipf_s
    return w / w.sum()


def _lexicon(spec: TaskSpec) -> np.ndarray:
    """Fixed bijection over real token ids, derived from the task seed."""
    rng = rng_mod.rng_for(spec.seed, rng_mod.LEXICON)
    perm = rng.permutation(spec.vocab_size - N_RESERVED) + N_RESERVED
    table = np.arange(spec.vocab_size)
    table[N_RESERVED:] = perm
    return table


def _swap_adjacent(seq: list[int]) -> list[int]:
    out = list(seq)
    for i in range(0, len(out) - 1, 2):
        out[i], out[i + 1] = out[i + 1], out[i]
    return out


def map_source_to_target(spec: TaskSpec, src: list[int]) -> list[int]:
    """The task's deterministic source-to-target mapping (noise excluded)."""
    if spec.kind == "copy":
        return list(src)
    if spec.kind == "reverse":
        return list(reversed(src))
    lex = _lexicon(spec)
    return _swap_adjacent([int(lex[t]) for t in src])


def invert_target(spec: TaskSpec, tgt: list[int]) -> list[int]:
    """Inverse of map_source_to_target (exact when noise_rate is 0)."""
    if spec.kind == "copy":
        return list(tgt)
    if spec.kind == "reverse":
        return list(reversed(tgt))
    lex = _lexicon(spec)
    inv = np.empty_like(lex)
    inv[lex] = np.arange(spec.vocab_size)
    return [int(inv[t]) for t in _swap_adjacent(tgt)]


def generate_corpus(spec: TaskSpec, n_pairs: int) -> ParallelCorpus:
    spec.validate()
    if n_pairs < 1:
        raise ContractError(f"n_pairs must be >= 1, got {n_pairs}")
    probs = _zipf_probs(spec)
    tok_rng = rng_mod.rng_for(spec.seed, rng_mod.TOKENS)
    noise_rng = rng_mod.rng_for(spec.seed, rng_mod.NOISE)
    real_ids = np.arange(N_RESERVED, spec.vocab_size)
    pairs = []
    for _ in range(n_pairs):
        length = int(tok_rng.integers(spec.len_min, spec.len_max + 1))
        src = [int(t) for t in tok_rng.choice(real_ids, size=length, p=probs)]
        tgt = map_source_to_target(spec, src)
        if spec.noise_rate > 0.0:
            hit = noise_rng.random(length) < spec.noise_rate
            repl = noise_rng.choice(real_ids, size=length)
            tgt = [int(repl[j]) if hit[j] else tgt[j] for j in range(length)]
        pairs.append((src, tgt))
    return ParallelCorpus(pairs=pairs, spec=spec)


def build_vocab(corpus: ParallelCorpus) -> Vocab:
    if not corpus.pairs:
        raise ContractError("cannot build a vocab from an empty corpus")
    size = corpus.spec.vocab_size
    counts = np.zeros(size, dtype=np.int64)
    for _, tgt in corpus.pairs:
        np.add.at(counts, np.asarray(tgt, dtype=np.int64), 1)
    return Vocab(size=size, counts=counts)


def _padded_len(src: list[int], tgt: list[int]) -> int:
    # target rows carry BOS/EOS, so they are one longer than the content
    return max(len(src), len(tgt) + 1)


def make_batches(corpus: ParallelCorpus, max_tokens: int, seed: int = 0,
                 shuffle: bool = False) -> list[TokenBatch]:
    """Length-bucketed padded batches covering every pair exactly once.

    Each batch satisfies n_sentences * padded_length <= max_tokens where
    padded_length = max over the batch of max(src_len, tgt_len + 1).
    """
    order = np.arange(len(corpus.pairs))
    if shuffle:
        order = rng_mod.rng_for(seed, rng_mod.DATA_ORDER).permutation(order)
    lens = np.asarray([_padded_len(*corpus.pairs[i]) for i in order])
    if lens.max() > max_tokens:
        worst = int(order[int(lens.argmax())])
        raise ContractError(
            f"pair {worst} needs {int(lens.max())} padded tokens, over budget {max_tokens}"
        )
    order = order[np.argsort(lens, kind="stable")]

    groups: list[list[int]] = []
    current: list[int] = []
    width = 0
    for idx in order:
        w = _padded_len(*corpus.pairs[idx])
        new_width = max(width, w)
        if current and (len(current) + 1) * new_width > max_tokens:
            groups.append(current)
            current, width = [idx], w
        else:
            current.append(idx)
            width = new_width
    if current:
        groups.append(current)
    if shuffle:
        batch_rng = rng_mod.rng_for(seed, rng_mod.DATA_ORDER, 1)
        groups = [groups[i] for i in batch_rng.permutation(len(groups))]
    return [_assemble(corpus, g) for g in groups]


def _assemble(corpus: ParallelCorpus, idxs: list[int]) -> TokenBatch:
    pairs = [corpus.pairs[i] for i in idxs]
    s = max(len(src) for src, _ in pairs)
    t = max(len(tgt) for _, tgt in pairs) + 1
    b = len(pairs)
    src_ids = np.full((b, s), PAD, dtype=np.int64)
    tgt_in = np.full((b, t), PAD, dtype=np.int64)
    tgt_out = np.full((b, t), PAD, dtype=np.int64)
    src_mask = np.zeros((b, s), dtype=bool)
    tgt_mask = np.zeros((b, t), dtype=bool)
    lengths = np.zeros(b, dtype=np.int64)
    for r, (src, tgt) in enumerate(pairs):
        src_ids[r, : len(src)] = src
        src_mask[r, : len(src)] = True
        tgt_in[r, 0] = BOS
        tgt_in[r, 1 : len(tgt) + 1] = tgt
        tgt_out[r, : len(tgt)] = tgt
        tgt_out[r, len(tgt)] = EOS
        tgt_mask[r, : len(tgt) + 1] = True
        lengths[r] = len(tgt)
    return TokenBatch(
        src_ids=src_ids, tgt_in_ids=tgt_in, tgt_out_ids=tgt_out,
        src_mask=src_mask, tgt_mask=tgt_mask, sentence_lengths=lengths,
        pair_ids=np.asarray(idxs, dtype=np.int64),
    )


def save_corpus(path, corpus: ParallelCorpus) -> None:
    """One pair per line: space-joined source ids, tab, space-joined target ids."""
    lines = []
    for src, tgt in corpus.pairs:
        lines.append(" ".join(map(str, src)) + "\t" + " ".join(map(str, tgt)))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_corpus(path, spec: TaskSpec | None = None) -> ParallelCorpus:
    pairs = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        src_part, tgt_part = line.split("\t")
        pairs.append(([int(x) for x in src_part.split()],
                      [int(x) for x in tgt_part.split()]))
    return ParallelCorpus(pairs=pairs, spec=spec or TaskSpec())
