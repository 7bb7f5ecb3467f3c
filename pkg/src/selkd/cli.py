"""Command line entry points.

Subcommands: gen-data, train-teacher, train-student, distill-seq,
partition-exp, sweep, eval, diag. Any ExperimentConfig field can come from
a JSON config file (--config); explicit flags override file values.
Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .data import TaskSpec, generate_corpus, load_corpus, save_corpus
from .errors import ConfigError, NumericsError
from .harness import (
    ExperimentConfig,
    compute_entropy_histogram,
    evaluate,
    run_partition_experiment,
    sweep,
    train_student,
    train_teacher,
)
from .losses import seq_kd_distill
from .model import load_model


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with ExperimentConfig fields")
    p.add_argument("--kd-mode", dest="kd_mode")
    p.add_argument("--alpha", type=float)
    p.add_argument("--r", type=float)
    p.add_argument("--q-size", dest="q_size", type=int)
    p.add_argument("--train-steps", dest="train_steps", type=int)
    p.add_argument("--teacher-steps", dest="teacher_steps", type=int)
    p.add_argument("--eval-every", dest="eval_every", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--seeds", help="comma-separated seed list (sweeps)")
    p.add_argument("--n-train", dest="n_train", type=int)
    p.add_argument("--n-val", dest="n_val", type=int)
    p.add_argument("--n-test", dest="n_test", type=int)
    p.add_argument("--max-tokens", dest="max_tokens", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--warmup-steps", dest="warmup_steps", type=int)
    p.add_argument("--eval-beam", dest="eval_beam", type=int)
    p.add_argument("--out-dir", dest="out_dir")


def _config_from_args(args) -> ExperimentConfig:
    base: dict = {}
    if getattr(args, "config", None):
        base = json.loads(Path(args.config).read_text())
    config = ExperimentConfig.from_dict(base) if base else ExperimentConfig()
    overrides = {}
    for name in ("kd_mode", "alpha", "r", "q_size", "train_steps", "teacher_steps",
                 "eval_every", "seed", "n_train", "n_val", "n_test", "max_tokens",
                 "lr", "warmup_steps", "eval_beam", "out_dir"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "seeds", None):
        overrides["seeds"] = tuple(int(s) for s in args.seeds.split(","))
    if overrides:
        config = replace(config, **overrides)
    return config.validate()


def _task_from_args(args) -> TaskSpec:
    return TaskSpec(
        kind=args.task, vocab_size=args.vocab_size, len_min=args.len_min,
        len_max=args.len_max, zipf_s=args.zipf_s, noise_rate=args.noise_rate,
        seed=args.seed,
    ).validate()


def build_parser() -> argparse.ArgumentParser:
    root = argparse.ArgumentParser(prog="selkd")
    sub = root.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic parallel corpus")
    g.add_argument("--task", default="lexicon_reorder")
    g.add_argument("--vocab-size", dest="vocab_size", type=int, default=64)
    g.add_argument("--len-min", dest="len_min", type=int, default=4)
    g.add_argument("--len-max", dest="len_max", type=int, default=12)
    g.add_argument("--zipf-s", dest="zipf_s", type=float, default=1.1)
    g.add_argument("--noise-rate", dest="noise_rate", type=float, default=0.0)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--n-pairs", dest="n_pairs", type=int, default=1000)
    g.add_argument("--out", required=True)

    t = sub.add_parser("train-teacher", help="train a teacher with plain CE")
    _add_config_flags(t)

    s = sub.add_parser("train-student", help="train a student under a KD mode")
    _add_config_flags(s)
    s.add_argument("--teacher", help="teacher checkpoint path")
    s.add_argument("--resume", help="run-state file to resume from")

    d = sub.add_parser("distill-seq", help="replace corpus targets with teacher output")
    d.add_argument("--teacher", required=True)
    d.add_argument("--data", required=True)
    d.add_argument("--out", required=True)
    d.add_argument("--beam", type=int, default=4)

    p = sub.add_parser("partition-exp", help="train high/low students for a criterion")
    _add_config_flags(p)
    p.add_argument("--teacher", required=True)
    p.add_argument("--criterion", required=True)

    w = sub.add_parser("sweep", help="grid over r or q_size")
    _add_config_flags(w)
    w.add_argument("--param", required=True, choices=["r", "q_size"])
    w.add_argument("--values", required=True, help="comma-separated values")
    w.add_argument("--out-csv", dest="out_csv")

    e = sub.add_parser("eval", help="BLEU + token accuracy of a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--beam", type=int, default=1)

    dg = sub.add_parser("diag", help="teacher-entropy histogram for a student/teacher pair")
    dg.add_argument("--student", required=True)
    dg.add_argument("--teacher", required=True)
    dg.add_argument("--data", required=True)
    dg.add_argument("--r", type=float, default=0.5)
    dg.add_argument("--out", required=True)
    return root


def _cmd_gen_data(args) -> int:
    spec = _task_from_args(args)
    corpus = generate_corpus(spec, args.n_pairs)
    save_corpus(args.out, corpus)
    print(f"wrote {len(corpus.pairs)} pairs to {args.out}")
    return 0


def _cmd_train_teacher(args) -> int:
    record = train_teacher(_config_from_args(args))
    print(f"best step {record.best_step}  val BLEU {record.best_val_bleu:.2f}  "
          f"ckpt {record.best_ckpt}")
    return 3 if record.aborted else 0


def _cmd_train_student(args) -> int:
    record = train_student(_config_from_args(args), teacher_ckpt=args.teacher,
                           resume_from=args.resume)
    print(f"best step {record.best_step}  val BLEU {record.best_val_bleu:.2f}  "
          f"ckpt {record.best_ckpt}")
    return 3 if record.aborted else 0


def _cmd_distill_seq(args) -> int:
    teacher, _ = load_model(args.teacher)
    corpus = load_corpus(args.data)
    out = seq_kd_distill(teacher, corpus, beam=args.beam, log=print)
    save_corpus(args.out, out)
    print(f"wrote {len(out.pairs)} distilled pairs to {args.out}")
    return 0


def _cmd_partition_exp(args) -> int:
    report = run_partition_experiment(_config_from_args(args), args.teacher,
                                      args.criterion)
    print(f"criterion {report.criterion.value}: high BLEU {report.high_test_bleu:.2f} "
          f"low BLEU {report.low_test_bleu:.2f}  delta {report.delta_bleu:+.2f}")
    print(f"token acc: high {report.high_test_acc:.4f} low {report.low_test_acc:.4f} "
          f"delta {report.delta_acc:+.4f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _config_from_args(args)
    raw = args.values.split(",")
    values = [float(v) for v in raw] if args.param == "r" else [int(v) for v in raw]
    rows = sweep(config, args.param, values, out_csv=args.out_csv)
    for row in rows:
        print(f"{args.param}={row['value']} seed={row['seed']} "
              f"val {row['best_val_bleu']:.2f} test {row['test_bleu']:.2f} "
              f"acc {row['test_acc']:.4f}")
    return 0


def _cmd_eval(args) -> int:
    corpus = load_corpus(args.data)
    report, acc = evaluate(args.ckpt, corpus, beam=args.beam)
    print(f"BLEU {report.score:.2f}  BP {report.brevity_penalty:.4f}  "
          f"token acc {acc:.4f}")
    return 0


def _cmd_diag(args) -> int:
    student, _ = load_model(args.student)
    teacher, _ = load_model(args.teacher)
    corpus = load_corpus(args.data)
    hist = compute_entropy_histogram(student, teacher, corpus, r=args.r)
    lines = ["bin_lo,bin_hi,group,count"]
    for group, counts in sorted(hist.counts.items()):
        for b, count in enumerate(counts):
            lines.append(f"{hist.bin_edges[b]!r},{hist.bin_edges[b + 1]!r},{group},{int(count)}")
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(f"wrote entropy histogram to {args.out}")
    return 0


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train-teacher": _cmd_train_teacher,
    "train-student": _cmd_train_student,
    "distill-seq": _cmd_distill_seq,
    "partition-exp": _cmd_partition_exp,
    "sweep": _cmd_sweep,
    "eval": _cmd_eval,
    "diag": _cmd_diag,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except NumericsError as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
