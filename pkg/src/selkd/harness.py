"""Experiment orchestration: teacher/student training under every
distillation mode, evaluation, partition experiments, sweeps, and reports.

Determinism contract: a run is a pure function of (config, seed). Every
random stream is derived from the run seed plus a stream tag plus the step
or epoch index, so a run resumed from a saved state file continues on
exactly the trajectory of the uninterrupted run.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import rng as rng_mod
from .backend import kernels
from .checkpoint import load_sidecar, load_tensors, save_sidecar, save_tensors
from .data import (
    ParallelCorpus,
    TaskSpec,
    TokenBatch,
    Vocab,
    build_vocab,
    generate_corpus,
    make_batches,
)
from .diagnostics import (
    AgreementStats,
    EntropyHistogram,
    ThresholdTrace,
    direction_agreement_rate,
)
from .errors import ConfigError, ContractError, NumericsError
from .losses import (
    TeacherDistribution,
    combined_objective,
    seq_kd_distill,
    smoothed_ce_adjustment,
    word_ce,
    word_kd,
)
from .metrics import BleuReport, bleu
from .model import (
    PAD,
    ModelParams,
    TransformerConfig,
    beam_search,
    forward_logits,
    greedy_decode_batch,
    init_params,
    load_model,
    save_model,
)
from .optim import AdamState, adam_step
from .selection import (
    CEQueue,
    Criterion,
    PartitionSpec,
    SelectionMask,
    batch_level_select,
    ce_scores,
    global_level_select,
    median_partition,
    median_split_units,
    score_tokens,
)
from .tensor import Tape, backward, mul, softmax, tensor_sum, zero_grads

KD_MODES = ("none", "word_kd", "seq_kd", "batch_select", "global_select", "partition")

# role tags so teacher and student runs with the same config seed still
# initialize and shuffle differently
ROLE_TEACHER = 1001
ROLE_STUDENT = 1002


@dataclass
class ExperimentConfig:
    task: TaskSpec = field(default_factory=TaskSpec)
    model: TransformerConfig = field(default_factory=TransformerConfig)
    kd_mode: str = "none"
    partition: PartitionSpec | None = None
    alpha: float = 1.0
    r: float = 0.5
    q_size: int = 2560
    train_steps: int = 2000
    teacher_steps: int = 0          # 0 means 2x train_steps
    eval_every: int = 200
    seed: int = 0
    seeds: tuple = ()               # used by sweeps; empty means (seed,)
    n_train: int = 4000
    n_val: int = 400
    n_test: int = 400
    max_tokens: int = 256
    lr: float = 7e-4
    warmup_steps: int = 400
    label_smoothing: float = 0.0
    grad_accum: int = 1
    eval_beam: int = 1
    seq_kd_beam: int = 1
    length_penalty: float = 0.0
    collect_diagnostics: bool = True
    save_state_every: int = 0       # 0 disables mid-run state files
    out_dir: str = "runs/run"

    def validate(self) -> "ExperimentConfig":
        self.task.validate()
        self.model.validate()
        if self.kd_mode not in KD_MODES:
            raise ConfigError(f"kd_mode must be one of {KD_MODES}, got {self.kd_mode!r}")
        if (self.kd_mode == "partition") != (self.partition is not None):
            raise ConfigError("partition spec must be present iff kd_mode='partition'")
        if not 0.0 <= self.r <= 1.0:
            raise ConfigError("r must be in [0, 1]")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.q_size < 1:
            raise ConfigError("q_size must be >= 1")
        if self.train_steps < 1 or self.eval_every < 1:
            raise ConfigError("train_steps and eval_every must be >= 1")
        if self.grad_accum < 1:
            raise ConfigError("grad_accum must be >= 1")
        if self.model.max_len < self.task.len_max + 2:
            raise ConfigError(
                f"model.max_len={self.model.max_len} too small for task len_max={self.task.len_max}"
            )
        return self

    @property
    def effective_teacher_steps(self) -> int:
        return self.teacher_steps if self.teacher_steps > 0 else 2 * self.train_steps

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.partition is not None:
            d["partition"] = {"criterion": self.partition.criterion.value,
                              "half": self.partition.half}
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        d = dict(d)
        if "task" in d and isinstance(d["task"], dict):
            d["task"] = TaskSpec(**d["task"])
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = TransformerConfig(**d["model"])
        if d.get("partition"):
            d["partition"] = PartitionSpec(**d["partition"])
        if "seeds" in d:
            d["seeds"] = tuple(d["seeds"])
        return cls(**d)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def trajectory_hash(self) -> str:
        """Hash over the fields that determine the parameter trajectory.

        Stopping points and plumbing (output paths, state-file cadence,
        diagnostics switches) are excluded, so a run may resume from a state
        file written by a shorter run of the same experiment.
        """
        d = self.to_dict()
        for key in ("out_dir", "save_state_every", "collect_diagnostics",
                    "train_steps", "teacher_steps", "seeds"):
            d.pop(key, None)
        blob = json.dumps(d, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class EvalPoint:
    step: int
    train_loss: float
    val_bleu: float
    val_acc: float


@dataclass
class RunRecord:
    config_hash: str
    evals: list[EvalPoint] = field(default_factory=list)
    best_step: int = 0
    best_val_bleu: float = -1.0
    best_ckpt: str = ""
    out_dir: str = ""
    aborted: bool = False

    @property
    def metrics_path(self) -> str:
        return str(Path(self.out_dir) / "metrics.csv")


@dataclass
class RunDiagnostics:
    agreement: list[AgreementStats] = field(default_factory=list)
    trace: ThresholdTrace = field(default_factory=ThresholdTrace)
    entropy: EntropyHistogram | None = None


@dataclass
class PartitionReport:
    criterion: Criterion
    high: RunRecord
    low: RunRecord
    high_test_bleu: float
    low_test_bleu: float
    high_test_acc: float
    low_test_acc: float

    @property
    def delta_bleu(self) -> float:
        return self.high_test_bleu - self.low_test_bleu

    @property
    def delta_acc(self) -> float:
        return self.high_test_acc - self.low_test_acc


def corpora_for(config: ExperimentConfig):
    """Train/validation/test corpora cut from one generation stream.

    Slicing a single stream keeps every split on the identical task (same
    lexicon, same frequency profile) while making the pairs disjoint draws.
    """
    task = config.task
    total = config.n_train + config.n_val + config.n_test
    full = generate_corpus(task, total)
    cut1 = config.n_train
    cut2 = cut1 + config.n_val
    train = ParallelCorpus(pairs=full.pairs[:cut1], spec=task)
    val = ParallelCorpus(pairs=full.pairs[cut1:cut2], spec=task)
    test = ParallelCorpus(pairs=full.pairs[cut2:], spec=task)
    return train, val, test


class BatchStream:
    """Epoch-shuffled batch supplier with O(epochs) exact repositioning."""

    def __init__(self, corpus: ParallelCorpus, max_tokens: int, run_seed: int):
        self.corpus = corpus
        self.max_tokens = max_tokens
        self.run_seed = run_seed
        self.epoch = 0
        self.pos = 0
        self.batches = self._make(0)

    def _make(self, epoch: int):
        seed = rng_mod.derive_seed(self.run_seed, rng_mod.DATA_ORDER, epoch)
        return make_batches(self.corpus, self.max_tokens, seed=seed, shuffle=True)

    def next(self) -> TokenBatch:
        if self.pos >= len(self.batches):
            self.epoch += 1
            self.batches = self._make(self.epoch)
            self.pos = 0
        batch = self.batches[self.pos]
        self.pos += 1
        return batch

    def seek(self, n_consumed: int) -> None:
        self.epoch, self.pos = 0, 0
        self.batches = self._make(0)
        remaining = n_consumed
        while remaining >= len(self.batches) - self.pos:
            remaining -= len(self.batches) - self.pos
            self.epoch += 1
            self.batches = self._make(self.epoch)
            self.pos = 0
        self.pos += remaining


def _teacher_probs(teacher: ModelParams, batch: TokenBatch) -> TeacherDistribution:
    logits = forward_logits(teacher, batch.src_ids, batch.src_mask,
                            batch.tgt_in_ids, batch.tgt_mask)
    return TeacherDistribution(probs=softmax(logits).data)


def _static_partition_masks(criterion: Criterion, corpus: ParallelCorpus,
                            vocab: Vocab) -> list[np.ndarray]:
    """Corpus-wide median masks for the data-property criteria, one boolean
    vector (content + end symbol) per pair."""
    from .model import EOS

    if criterion is Criterion.SENTENCE_LENGTH:
        lengths = np.asarray([len(tgt) for _, tgt in corpus.pairs], dtype=np.float64)
        high_pairs = median_split_units(lengths)
        return [np.full(len(tgt) + 1, bool(high_pairs[i]))
                for i, (_, tgt) in enumerate(corpus.pairs)]
    if criterion is Criterion.WORD_FREQUENCY:
        occ_scores = []
        spans = []
        for _, tgt in corpus.pairs:
            ids = list(tgt) + [EOS]
            occ_scores.extend(float(vocab.counts[t]) for t in ids)
            spans.append(len(ids))
        high_occ = median_split_units(np.asarray(occ_scores))
        masks, off = [], 0
        for span in spans:
            masks.append(high_occ[off : off + span].copy())
            off += span
        return masks
    raise ContractError(f"criterion {criterion.value} is not static")


class _Trainer:
    """One training run. Role 'teacher' means plain cross-entropy."""

    def __init__(self, config: ExperimentConfig, role: str,
                 teacher: ModelParams | None = None):
        config.validate()
        self.config = config
        self.role = role
        self.teacher = teacher
        self.kd_mode = config.kd_mode if role == "student" else "none"
        if role == "student" and self.kd_mode not in ("none",) and teacher is None:
            raise ConfigError(f"kd_mode={self.kd_mode} requires a teacher checkpoint")
        if teacher is not None:
            tc, sc = teacher.config, config.model
            if (tc.src_vocab, tc.tgt_vocab) != (sc.src_vocab, sc.tgt_vocab):
                raise ConfigError(
                    f"teacher vocab ({tc.src_vocab},{tc.tgt_vocab}) is incompatible "
                    f"with student ({sc.src_vocab},{sc.tgt_vocab})"
                )
        self.run_seed = rng_mod.derive_seed(
            config.seed, ROLE_TEACHER if role == "teacher" else ROLE_STUDENT
        )
        self.steps = config.train_steps if role == "student" else config.effective_teacher_steps
        self.out_dir = Path(config.out_dir) / role
        self.out_dir.mkdir(parents=True, exist_ok=True)

        self.train_corpus, self.val_corpus, self.test_corpus = corpora_for(config)
        self.vocab = build_vocab(self.train_corpus)
        if self.kd_mode == "seq_kd":
            self.train_corpus = seq_kd_distill(
                teacher, self.train_corpus, beam=config.seq_kd_beam,
                length_penalty=config.length_penalty,
            )
        self.stream = BatchStream(self.train_corpus, config.max_tokens, self.run_seed)

        self.params = init_params(config.model, self.run_seed)
        self.adam = AdamState.for_params(
            self.params.tensors, lr=config.lr, warmup_steps=config.warmup_steps
        )
        self.queue = CEQueue(config.q_size) if self.kd_mode == "global_select" else None
        self.static_masks = None
        if self.kd_mode == "partition" and config.partition.criterion.static:
            self.static_masks = _static_partition_masks(
                config.partition.criterion, self.train_corpus, self.vocab
            )
        self.record = RunRecord(config_hash=config.hash(), out_dir=str(self.out_dir))
        self.diag = RunDiagnostics()
        self.step = 0

    # -- selection --------------------------------------------------------

    def _needs_ce_scores(self) -> bool:
        if self.kd_mode in ("batch_select", "global_select"):
            return True
        if self.kd_mode == "partition":
            crit = self.config.partition.criterion
            return crit.needs_student_logits
        return False

    def _needs_teacher_forward(self) -> bool:
        if self.teacher is None:
            return False
        if self.kd_mode in ("word_kd", "batch_select", "global_select", "partition"):
            if self.config.alpha > 0:
                return True
            crit = self.config.partition.criterion if self.kd_mode == "partition" else None
            return crit is not None and crit.needs_teacher
        return False

    def _select(self, batch: TokenBatch, eval_logits: np.ndarray | None,
                teacher_dist: TeacherDistribution | None,
                record_trace: bool = True) -> SelectionMask:
        valid = batch.tgt_mask
        if self.kd_mode in ("none", "seq_kd"):
            return SelectionMask(np.zeros_like(valid), math.inf, 0)
        if self.kd_mode == "word_kd":
            return SelectionMask(valid.copy(), -math.inf, int(valid.sum()))
        if self.kd_mode == "batch_select":
            ces = ce_scores(eval_logits, batch.tgt_out_ids)
            sel = batch_level_select(ces, valid, self.config.r)
            if record_trace:
                self.diag.trace.record(self.step, "batch", sel.threshold_used)
            return sel
        if self.kd_mode == "global_select":
            ces = ce_scores(eval_logits, batch.tgt_out_ids)
            sel, _ = global_level_select(ces, valid, self.queue, self.config.r)
            if record_trace:
                self.diag.trace.record(self.step, "global", sel.threshold_used)
            return sel
        # partition mode
        part = self.config.partition
        if part.criterion.static:
            high = np.zeros_like(valid)
            for row, pid in enumerate(batch.pair_ids):
                span = self.static_masks[pid]
                high[row, : span.size] = span
            low = valid & ~high
        else:
            scores = score_tokens(
                part.criterion, batch, student_logits=eval_logits,
                teacher=teacher_dist,
                embeddings=self.params["tgt_embed"].data, vocab=self.vocab,
            )
            high, low = median_partition(scores, valid, part.criterion.sentence_level)
        mask = high if part.half == "high" else low
        return SelectionMask(mask, math.nan, int(mask.sum()))

    # -- one optimizer step -------------------------------------------------

    def _micro_step(self, micro: int, scale: float) -> tuple[float, TokenBatch, SelectionMask]:
        cfg = self.config
        batch = self.stream.next()
        eval_logits = None
        if self._needs_ce_scores():
            eval_logits = forward_logits(
                self.params, batch.src_ids, batch.src_mask,
                batch.tgt_in_ids, batch.tgt_mask,
            ).data
        teacher_dist = _teacher_probs(self.teacher, batch) if self._needs_teacher_forward() else None
        sel = self._select(batch, eval_logits, teacher_dist, record_trace=micro == 0)

        drop_rng = rng_mod.rng_for(self.run_seed, rng_mod.DROPOUT, self.step, micro)
        with Tape() as tape:
            logits = forward_logits(
                self.params, batch.src_ids, batch.src_mask,
                batch.tgt_in_ids, batch.tgt_mask, dropout_rng=drop_rng,
            )
            ce = word_ce(logits, batch.tgt_out_ids, batch.tgt_mask)
            kd = None
            if cfg.alpha > 0 and sel.mask.any() and teacher_dist is not None:
                kd = word_kd(logits, teacher_dist, batch.tgt_mask)
            loss = combined_objective(ce, kd, sel.mask, cfg.alpha)
            if cfg.label_smoothing > 0.0:
                ls = cfg.label_smoothing
                n_valid = float(batch.tgt_mask.sum())
                ce_mean = mul(tensor_sum(ce.ce), 1.0 / n_valid)
                smooth = smoothed_ce_adjustment(logits, batch.tgt_mask, ls)
                loss = loss + mul(smooth - ce_mean, ls)
            if scale != 1.0:
                loss = mul(loss, scale)
        value = float(loss.data)
        if not np.isfinite(value):
            raise NumericsError(f"training loss is not finite at step {self.step}")
        backward(loss, tape)
        return value, batch, sel

    def _eval_validation(self) -> tuple[float, float]:
        acc = evaluate_token_accuracy(self.params, self.val_corpus, self.config.max_tokens)
        report = evaluate_bleu(self.params, self.val_corpus, self.config.eval_beam,
                               self.config.length_penalty)
        return report.score, acc

    def _record_agreement(self, batch: TokenBatch, sel: SelectionMask) -> None:
        if self.teacher is None or self.config.alpha <= 0:
            return
        eval_logits = forward_logits(
            self.params, batch.src_ids, batch.src_mask,
            batch.tgt_in_ids, batch.tgt_mask,
        ).data
        flat = np.ascontiguousarray(eval_logits.reshape(-1, eval_logits.shape[-1]))
        probs = kernels.softmax_fwd(flat).reshape(eval_logits.shape)
        teacher_dist = _teacher_probs(self.teacher, batch)
        groups = {
            "hard": sel.mask,
            "easy": batch.tgt_mask & ~sel.mask,
            "all": batch.tgt_mask,
        }
        for name, mask in groups.items():
            if not mask.any():
                continue
            try:
                stats = direction_agreement_rate(
                    probs, batch.tgt_out_ids, teacher_dist.probs, mask,
                    step=self.step, group=name,
                )
            except ContractError:
                continue
            self.diag.agreement.append(stats)

    # -- run ---------------------------------------------------------------

    def run(self, resume_from: str | None = None) -> RunRecord:
        cfg = self.config
        if resume_from:
            self._load_state(resume_from)
        eval_steps = set(range(cfg.eval_every, self.steps + 1, cfg.eval_every))
        eval_steps.add(self.steps)
        try:
            while self.step < self.steps:
                self.step += 1
                zero_grads(self.params.tensors.values())
                loss_total = 0.0
                scale = 1.0 / cfg.grad_accum
                for micro in range(cfg.grad_accum):
                    value, batch, sel = self._micro_step(micro, scale)
                    loss_total += value
                adam_step(self.params.tensors, self.adam)
                if self.step in eval_steps:
                    self._on_eval(loss_total, batch, sel)
                    if cfg.save_state_every and self.step % cfg.save_state_every == 0:
                        self._save_state()
        except NumericsError:
            self.record.aborted = True
        self._finalize()
        return self.record

    def _on_eval(self, train_loss: float, batch: TokenBatch, sel: SelectionMask) -> None:
        val_bleu, val_acc = self._eval_validation()
        self.record.evals.append(
            EvalPoint(step=self.step, train_loss=train_loss,
                      val_bleu=val_bleu, val_acc=val_acc)
        )
        if val_bleu > self.record.best_val_bleu:
            self.record.best_val_bleu = val_bleu
            self.record.best_step = self.step
            self.record.best_ckpt = str(self.out_dir / "best.ckpt")
            save_model(self.record.best_ckpt, self.params,
                       meta={"step": self.step, "seed": self.config.seed,
                             "role": self.role, "config_hash": self.record.config_hash})
        if self.config.collect_diagnostics and self.kd_mode not in ("none", "seq_kd"):
            self._record_agreement(batch, sel)

    def _finalize(self) -> None:
        if not self.record.best_ckpt:
            # never evaluated above abort threshold: keep final params anyway
            self.record.best_ckpt = str(self.out_dir / "best.ckpt")
            save_model(self.record.best_ckpt, self.params,
                       meta={"step": self.step, "seed": self.config.seed,
                             "role": self.role, "config_hash": self.record.config_hash})
        emit_report(self.record, self.diag, self.out_dir)

    # -- state files ---------------------------------------------------------

    def _save_state(self) -> None:
        arrays = {f"param.{k}": v.data for k, v in self.params.tensors.items()}
        for name in self.adam.m:
            arrays[f"adam.m.{name}"] = self.adam.m[name]
            arrays[f"adam.v.{name}"] = self.adam.v[name]
        meta = {
            "step": self.step,
            "adam_step": self.adam.step,
            "config_hash": self.record.config_hash,
            "trajectory_hash": self.config.trajectory_hash(),
            "stream_consumed": self.step * self.config.grad_accum,
            "best_step": self.record.best_step,
            "best_val_bleu": self.record.best_val_bleu,
            "best_ckpt": self.record.best_ckpt,
            "evals": [asdict(e) for e in self.record.evals],
            "trace": {k: v for k, v in self.diag.trace.records.items()},
            "agreement": [asdict(a) for a in self.diag.agreement],
        }
        if self.queue is not None:
            snap = self.queue.snapshot()
            arrays["queue.storage"] = snap["storage"]
            meta["queue"] = {"head": snap["head"], "count": snap["count"]}
        path = self.out_dir / f"state_{self.step:07d}.ckpt"
        save_tensors(path, arrays)
        save_sidecar(str(path) + ".json", meta)

    def _load_state(self, path: str) -> None:
        arrays = load_tensors(path)
        meta = load_sidecar(str(path) + ".json")
        if meta["trajectory_hash"] != self.config.trajectory_hash():
            raise ConfigError("state file was produced by a different config")
        for k, t in self.params.tensors.items():
            t.data[...] = arrays[f"param.{k}"]
        for name in self.adam.m:
            self.adam.m[name][...] = arrays[f"adam.m.{name}"]
            self.adam.v[name][...] = arrays[f"adam.v.{name}"]
        self.adam.step = int(meta["adam_step"])
        self.step = int(meta["step"])
        self.stream.seek(int(meta["stream_consumed"]))
        if self.queue is not None:
            self.queue = CEQueue.restore(
                {"storage": arrays["queue.storage"], **meta["queue"]}
            )
        self.record.best_step = int(meta["best_step"])
        self.record.best_val_bleu = float(meta["best_val_bleu"])
        self.record.best_ckpt = meta["best_ckpt"]
        self.record.evals = [EvalPoint(**e) for e in meta["evals"]]
        for strategy, rows in meta.get("trace", {}).items():
            self.diag.trace.records[strategy] = [(int(s), float(v)) for s, v in rows]
        self.diag.agreement = [AgreementStats(**a) for a in meta.get("agreement", [])]


# -- public operations ------------------------------------------------------


def train_teacher(config: ExperimentConfig) -> RunRecord:
    """Plain cross-entropy training, checkpointing best-by-validation."""
    return _Trainer(config, role="teacher").run()


def train_student(config: ExperimentConfig, teacher_ckpt: str | None = None,
                  resume_from: str | None = None) -> RunRecord:
    teacher = None
    if teacher_ckpt:
        teacher, _ = load_model(teacher_ckpt)
    trainer = _Trainer(config, role="student", teacher=teacher)
    return trainer.run(resume_from=resume_from)


def evaluate_token_accuracy(params: ModelParams, corpus: ParallelCorpus,
                            max_tokens: int = 512) -> float:
    """Teacher-forced argmax accuracy over every valid target position."""
    hits = total = 0
    for batch in make_batches(corpus, max_tokens):
        logits = forward_logits(params, batch.src_ids, batch.src_mask,
                                batch.tgt_in_ids, batch.tgt_mask).data
        pred = logits.argmax(axis=-1)
        hits += int(((pred == batch.tgt_out_ids) & batch.tgt_mask).sum())
        total += int(batch.tgt_mask.sum())
    return hits / total if total else 0.0


def decode_corpus(params: ModelParams, corpus: ParallelCorpus, beam: int = 1,
                  length_penalty: float = 0.0) -> list[list[int]]:
    """Decoded content tokens for every source sentence."""
    if beam == 1:
        outputs = []
        chunk = 64
        for lo in range(0, len(corpus.pairs), chunk):
            block = corpus.pairs[lo : lo + chunk]
            s = max(len(src) for src, _ in block)
            ids = np.full((len(block), s), PAD, dtype=np.int64)
            mask = np.zeros((len(block), s), dtype=bool)
            for r, (src, _) in enumerate(block):
                ids[r, : len(src)] = src
                mask[r, : len(src)] = True
            outputs.extend(h.content for h in greedy_decode_batch(params, ids, mask))
        return outputs
    return [beam_search(params, src, beam, length_penalty).content
            for src, _ in corpus.pairs]


def evaluate_bleu(params: ModelParams, corpus: ParallelCorpus, beam: int = 1,
                  length_penalty: float = 0.0, smoothing: bool = True) -> BleuReport:
    cands = decode_corpus(params, corpus, beam, length_penalty)
    refs = [tgt for _, tgt in corpus.pairs]
    return bleu(cands, refs, smoothing=smoothing)


def evaluate(ckpt_path: str, corpus: ParallelCorpus, beam: int = 1,
             length_penalty: float = 0.0) -> tuple[BleuReport, float]:
    """Beam-decoded BLEU plus teacher-forced token accuracy for a checkpoint."""
    params, _ = load_model(ckpt_path)
    report = evaluate_bleu(params, corpus, beam, length_penalty)
    acc = evaluate_token_accuracy(params, corpus)
    return report, acc


def run_partition_experiment(config: ExperimentConfig, teacher_ckpt: str,
                             criterion: Criterion | str) -> PartitionReport:
    """Train one student with distillation only on the high half of the
    criterion and one with only the low half; report the test-metric gap."""
    criterion = Criterion(criterion)
    reports = {}
    for half in ("high", "low"):
        sub = replace(
            config,
            kd_mode="partition",
            partition=PartitionSpec(criterion=criterion, half=half),
            out_dir=str(Path(config.out_dir) / f"partition_{criterion.value}_{half}"),
        )
        record = train_student(sub, teacher_ckpt)
        test_corpus = corpora_for(sub)[2]
        b, acc = evaluate(record.best_ckpt, test_corpus, beam=sub.eval_beam,
                          length_penalty=sub.length_penalty)
        reports[half] = (record, b.score, acc)
    return PartitionReport(
        criterion=criterion,
        high=reports["high"][0], low=reports["low"][0],
        high_test_bleu=reports["high"][1], low_test_bleu=reports["low"][1],
        high_test_acc=reports["high"][2], low_test_acc=reports["low"][2],
    )


def sweep(config: ExperimentConfig, parameter: str, values, out_csv: str | None = None):
    """One student run per (value, seed); returns rows of best/test metrics."""
    if parameter not in ("r", "q_size"):
        raise ConfigError(f"sweep parameter must be 'r' or 'q_size', got {parameter!r}")
    values = list(values)
    if len(values) < 2:
        raise ContractError("sweep needs at least 2 values")
    seeds = list(config.seeds) or [config.seed]
    rows = []
    for seed in seeds:
        teacher_cfg = replace(config, seed=seed,
                              out_dir=str(Path(config.out_dir) / f"seed{seed}"))
        teacher_rec = train_teacher(teacher_cfg)
        for value in values:
            overrides = {parameter: (float(value) if parameter == "r" else int(value))}
            sub = replace(
                teacher_cfg,
                out_dir=str(Path(config.out_dir) / f"seed{seed}" / f"{parameter}{value}"),
                **overrides,
            )
            record = train_student(sub, teacher_rec.best_ckpt)
            test_corpus = corpora_for(sub)[2]
            b, acc = evaluate(record.best_ckpt, test_corpus, beam=sub.eval_beam)
            rows.append({
                "parameter": parameter, "value": value, "seed": seed,
                "best_val_bleu": record.best_val_bleu,
                "test_bleu": b.score, "test_acc": acc,
            })
    if out_csv:
        _write_csv(out_csv, rows,
                   ["parameter", "value", "seed", "best_val_bleu", "test_bleu", "test_acc"])
    return rows


def compute_entropy_histogram(student: ModelParams, teacher: ModelParams,
                              corpus: ParallelCorpus, r: float = 0.5,
                              max_tokens: int = 10_000, bins: int = 20,
                              batch_budget: int = 256) -> EntropyHistogram:
    """Teacher-entropy histogram split by the hard/easy token selection at
    the student's current state (batch-level rule)."""
    ent_groups = {"hard": [], "easy": []}
    seen = 0
    for batch in make_batches(corpus, batch_budget):
        logits = forward_logits(student, batch.src_ids, batch.src_mask,
                                batch.tgt_in_ids, batch.tgt_mask).data
        ces = ce_scores(logits, batch.tgt_out_ids)
        sel = batch_level_select(ces, batch.tgt_mask, r)
        tdist = _teacher_probs(teacher, batch)
        ent = tdist.entropy()
        ent_groups["hard"].append(ent[sel.mask])
        ent_groups["easy"].append(ent[batch.tgt_mask & ~sel.mask])
        seen += batch.n_valid_tokens
        if seen >= max_tokens:
            break
    vocab_ln = float(np.log(student.config.tgt_vocab))
    all_vals = np.concatenate([np.concatenate(v) for v in ent_groups.values() if v])
    hi = max(vocab_ln, float(all_vals.max()) if all_vals.size else vocab_ln)
    bin_edges = np.linspace(0.0, hi, bins + 1)
    counts = {
        name: np.histogram(np.concatenate(vals) if vals else np.empty(0), bins=bin_edges)[0]
        for name, vals in ent_groups.items()
    }
    return EntropyHistogram(bin_edges=bin_edges, counts=counts)


# -- reports ------------------------------------------------------------------


def _write_csv(path, rows: list[dict], headers: list[str]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=headers)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def emit_report(record: RunRecord, diag: RunDiagnostics, out_dir) -> dict[str, str]:
    """Write metrics/diagnostics CSVs plus a summary JSON; returns paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}

    metrics = out / "metrics.csv"
    _write_csv(metrics,
               [{"step": e.step, "train_loss": repr(e.train_loss),
                 "val_bleu": repr(e.val_bleu), "val_acc": repr(e.val_acc)}
                for e in record.evals],
               ["step", "train_loss", "val_bleu", "val_acc"])
    paths["metrics"] = str(metrics)

    agreement = out / "agreement.csv"
    _write_csv(agreement,
               [{"step": a.step, "group": a.group, "rate": repr(a.rate),
                 "agree": a.agree_count, "total": a.total_count}
                for a in diag.agreement],
               ["step", "group", "rate", "agree", "total"])
    paths["agreement"] = str(agreement)

    trace = out / "threshold_trace.csv"
    trace_rows = []
    for strategy, rows in sorted(diag.trace.records.items()):
        trace_rows.extend(
            {"step": s, "strategy": strategy, "threshold": repr(v)} for s, v in rows
        )
    _write_csv(trace, trace_rows, ["step", "strategy", "threshold"])
    paths["trace"] = str(trace)

    hist = out / "entropy_hist.csv"
    hist_rows = []
    if diag.entropy is not None:
        e = diag.entropy
        for group, counts in sorted(e.counts.items()):
            for b in range(len(counts)):
                hist_rows.append({
                    "bin_lo": repr(float(e.bin_edges[b])),
                    "bin_hi": repr(float(e.bin_edges[b + 1])),
                    "group": group, "count": int(counts[b]),
                })
    _write_csv(hist, hist_rows, ["bin_lo", "bin_hi", "group", "count"])
    paths["entropy"] = str(hist)

    summary = out / "summary.json"
    save_sidecar(summary, {
        "config_hash": record.config_hash,
        "best_step": record.best_step,
        "best_val_bleu": record.best_val_bleu,
        "best_ckpt": record.best_ckpt,
        "aborted": record.aborted,
        "n_evals": len(record.evals),
    })
    paths["summary"] = str(summary)
    return paths


def load_metrics_csv(path) -> list[EvalPoint]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(EvalPoint(step=int(row["step"]),
                                 train_loss=float(row["train_loss"]),
                                 val_bleu=float(row["val_bleu"]),
                                 val_acc=float(row["val_acc"])))
    return out
