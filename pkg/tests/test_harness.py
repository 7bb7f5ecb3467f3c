from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from selkd.data import TaskSpec, generate_corpus
from selkd.errors import ConfigError
from selkd.harness import (
    BatchStream,
    ExperimentConfig,
    RunDiagnostics,
    RunRecord,
    _static_partition_masks,
    corpora_for,
    emit_report,
    evaluate,
    load_metrics_csv,
    sweep,
    train_student,
    train_teacher,
)
from selkd.data import build_vocab
from selkd.model import TransformerConfig, load_model
from selkd.selection import Criterion, PartitionSpec


def small_config(tmp_path, **kw):
    base = dict(
        task=TaskSpec(kind="copy", vocab_size=24, len_min=2, len_max=6,
                      zipf_s=0.8, noise_rate=0.0, seed=0),
        model=TransformerConfig(enc_layers=1, dec_layers=1, d_model=32, d_ff=64,
                                n_heads=4, src_vocab=24, tgt_vocab=24,
                                dropout=0.1, max_len=10),
        train_steps=40, teacher_steps=60, eval_every=20,
        n_train=120, n_val=40, n_test=40, max_tokens=128,
        lr=2e-3, warmup_steps=20, out_dir=str(tmp_path / "run"), seed=0,
    )
    base.update(kw)
    return ExperimentConfig(**base)


def test_config_validation(tmp_path):
    with pytest.raises(ConfigError, match="kd_mode"):
        small_config(tmp_path, kd_mode="bogus").validate()
    with pytest.raises(ConfigError, match="partition"):
        small_config(tmp_path, kd_mode="partition").validate()
    with pytest.raises(ConfigError, match="partition"):
        small_config(tmp_path, partition=PartitionSpec(Criterion.WORD_CE, "high")).validate()
    with pytest.raises(ConfigError, match="max_len"):
        small_config(
            tmp_path,
            task=TaskSpec(kind="copy", vocab_size=24, len_min=2, len_max=20, seed=0),
        ).validate()


def test_config_round_trip_and_hash(tmp_path):
    cfg = small_config(tmp_path, kd_mode="partition",
                       partition=PartitionSpec(Criterion.WORD_CE, "high"))
    back = ExperimentConfig.from_dict(cfg.to_dict())
    assert back.hash() == cfg.hash()
    other = replace(cfg, alpha=2.0)
    assert other.hash() != cfg.hash()


def test_corpora_splits_are_distinct(tmp_path):
    cfg = small_config(tmp_path)
    train, val, test = corpora_for(cfg)
    assert len(train.pairs) == 120 and len(val.pairs) == 40 and len(test.pairs) == 40
    assert train.pairs[:5] != val.pairs[:5]
    assert val.pairs[:5] != test.pairs[:5]


def test_batch_stream_seek_reproduces_sequence(tmp_path):
    cfg = small_config(tmp_path)
    corpus = generate_corpus(cfg.task, 60)
    a = BatchStream(corpus, cfg.max_tokens, run_seed=7)
    served = [a.next().pair_ids for _ in range(25)]
    b = BatchStream(corpus, cfg.max_tokens, run_seed=7)
    b.seek(10)
    for i in range(10, 25):
        assert np.array_equal(b.next().pair_ids, served[i])


def test_teacher_run_and_metrics_log(tmp_path):
    cfg = small_config(tmp_path)
    record = train_teacher(cfg)
    # eval_every=20, teacher_steps=60 -> evals at 20, 40, 60
    assert [e.step for e in record.evals] == [20, 40, 60]
    assert Path(record.best_ckpt).exists()
    parsed = load_metrics_csv(record.metrics_path)
    assert [(p.step, p.val_bleu) for p in parsed] == [
        (e.step, e.val_bleu) for e in record.evals
    ]


def test_single_final_eval_when_interval_exceeds_steps(tmp_path):
    cfg = small_config(tmp_path, eval_every=500)
    record = train_teacher(cfg)
    assert [e.step for e in record.evals] == [60]


def test_same_seed_identical_metric_logs(tmp_path):
    rec_a = train_teacher(small_config(tmp_path, out_dir=str(tmp_path / "a")))
    rec_b = train_teacher(small_config(tmp_path, out_dir=str(tmp_path / "b")))
    assert Path(rec_a.metrics_path).read_bytes() == Path(rec_b.metrics_path).read_bytes()


@pytest.fixture(scope="module")
def shared(tmp_path_factory):
    """A trained teacher plus its config, reused across student tests."""
    root = tmp_path_factory.mktemp("harness_shared")
    cfg = small_config(root)
    teacher = train_teacher(cfg)
    return root, cfg, teacher


def test_student_modes_run_and_differ(shared):
    root, cfg, teacher = shared
    records = {}
    for mode in ("none", "word_kd", "batch_select", "global_select"):
        sub = replace(cfg, kd_mode=mode, train_steps=20,
                      out_dir=str(root / f"mode_{mode}"))
        records[mode] = train_student(
            sub, teacher.best_ckpt if mode != "none" else None
        )
    none_params, _ = load_model(records["none"].best_ckpt)
    kd_params, _ = load_model(records["word_kd"].best_ckpt)
    assert any(
        not np.array_equal(none_params[k].data, kd_params[k].data)
        for k in none_params.tensors
    )


def test_student_requires_teacher_for_kd(shared):
    _, cfg, _ = shared
    with pytest.raises(ConfigError, match="teacher"):
        train_student(replace(cfg, kd_mode="word_kd"), teacher_ckpt=None)


def test_vocab_compat_checked(shared, tmp_path):
    root, cfg, teacher = shared
    bad_model = replace(cfg.model, src_vocab=30, tgt_vocab=30)
    bad_task = replace(cfg.task, vocab_size=30)
    sub = replace(cfg, model=bad_model, task=bad_task, kd_mode="word_kd",
                  out_dir=str(tmp_path / "bad"))
    with pytest.raises(ConfigError, match="vocab"):
        train_student(sub, teacher.best_ckpt)


def test_none_equals_alpha_zero_bitwise(shared):
    root, cfg, teacher = shared
    a = train_student(replace(cfg, kd_mode="none", train_steps=25,
                              out_dir=str(root / "eq_none")), None)
    b = train_student(replace(cfg, kd_mode="word_kd", alpha=0.0, train_steps=25,
                              out_dir=str(root / "eq_alpha0")), teacher.best_ckpt)
    pa, _ = load_model(a.best_ckpt)
    pb, _ = load_model(b.best_ckpt)
    for name in pa.tensors:
        assert np.array_equal(pa[name].data, pb[name].data), name


def test_word_kd_equals_batch_select_r1_bitwise(shared):
    root, cfg, teacher = shared
    a = train_student(replace(cfg, kd_mode="word_kd", train_steps=25,
                              out_dir=str(root / "eq_wkd")), teacher.best_ckpt)
    b = train_student(replace(cfg, kd_mode="batch_select", r=1.0, train_steps=25,
                              out_dir=str(root / "eq_bls1")), teacher.best_ckpt)
    pa, _ = load_model(a.best_ckpt)
    pb, _ = load_model(b.best_ckpt)
    for name in pa.tensors:
        assert np.array_equal(pa[name].data, pb[name].data), name


def test_global_select_resume_trajectory_exact(shared):
    root, cfg, teacher = shared
    full_cfg = replace(cfg, kd_mode="global_select", train_steps=30, eval_every=10,
                       q_size=200, save_state_every=10,
                       out_dir=str(root / "resume_full"))
    full = train_student(full_cfg, teacher.best_ckpt)

    # same config, interrupted at step 10 then resumed
    half_cfg = replace(full_cfg, train_steps=10, save_state_every=10,
                       out_dir=str(root / "resume_half"))
    train_student(half_cfg, teacher.best_ckpt)
    state = Path(half_cfg.out_dir) / "student" / "state_0000010.ckpt"
    assert state.exists()

    resumed_cfg = replace(full_cfg, out_dir=str(root / "resume_cont"))
    resumed = train_student(resumed_cfg, teacher.best_ckpt, resume_from=str(state))

    assert [(e.step, e.val_bleu, e.val_acc, e.train_loss) for e in resumed.evals] == [
        (e.step, e.val_bleu, e.val_acc, e.train_loss) for e in full.evals
    ]
    pa, _ = load_model(full.best_ckpt)
    pb, _ = load_model(resumed.best_ckpt)
    for name in pa.tensors:
        assert np.array_equal(pa[name].data, pb[name].data), name


def test_resume_rejects_config_mismatch(shared):
    root, cfg, teacher = shared
    run_cfg = replace(cfg, kd_mode="global_select", train_steps=10, eval_every=5,
                      save_state_every=5, out_dir=str(root / "mismatch"))
    train_student(run_cfg, teacher.best_ckpt)
    state = Path(run_cfg.out_dir) / "student" / "state_0000005.ckpt"
    other = replace(run_cfg, alpha=3.0, out_dir=str(root / "mismatch2"))
    with pytest.raises(ConfigError, match="different config"):
        train_student(other, teacher.best_ckpt, resume_from=str(state))


def test_partition_modes_produce_complementary_masks(shared):
    root, cfg, teacher = shared
    from selkd.harness import _Trainer
    from selkd.model import ModelParams

    for crit in (Criterion.WORD_CE, Criterion.SENTENCE_LENGTH):
        sub = replace(cfg, kd_mode="partition",
                      partition=PartitionSpec(crit, "high"),
                      out_dir=str(root / f"pmask_{crit.value}"))
        teacher_params, _ = load_model(teacher.best_ckpt)
        tr = _Trainer(sub, role="student", teacher=teacher_params)
        batch = tr.stream.next()
        eval_logits = None
        if crit.needs_student_logits:
            from selkd.model import forward_logits

            eval_logits = forward_logits(tr.params, batch.src_ids, batch.src_mask,
                                         batch.tgt_in_ids, batch.tgt_mask).data
        high = tr._select(batch, eval_logits, None, record_trace=False)
        tr.config.partition.half = "low"
        low = tr._select(batch, eval_logits, None, record_trace=False)
        assert not (high.mask & low.mask).any()
        assert ((high.mask | low.mask) == batch.tgt_mask).all()


def test_static_partition_masks_cover_half_the_corpus():
    task = TaskSpec(kind="copy", vocab_size=24, len_min=2, len_max=6, seed=3)
    corpus = generate_corpus(task, 51)
    vocab = build_vocab(corpus)
    for crit in (Criterion.SENTENCE_LENGTH, Criterion.WORD_FREQUENCY):
        masks = _static_partition_masks(crit, corpus, vocab)
        assert len(masks) == 51
        if crit is Criterion.SENTENCE_LENGTH:
            units = np.asarray([m[0] for m in masks])
            assert abs(units.sum() - (51 - units.sum())) <= 1
        else:
            total = sum(m.size for m in masks)
            high = sum(int(m.sum()) for m in masks)
            assert abs(high - (total - high)) <= 1


def test_evaluate_checkpoint_deterministic(shared):
    _, cfg, teacher = shared
    test_corpus = corpora_for(cfg)[2]
    a = evaluate(teacher.best_ckpt, test_corpus, beam=1)
    b = evaluate(teacher.best_ckpt, test_corpus, beam=1)
    assert a[0].score == b[0].score
    assert a[1] == b[1]


def test_evaluate_reference_as_candidates_is_100(shared):
    _, cfg, teacher = shared
    from selkd.metrics import bleu

    test_corpus = corpora_for(cfg)[2]
    refs = [tgt for _, tgt in test_corpus.pairs]
    assert bleu(refs, refs).score == 100.0


def test_sweep_rows_and_endpoints(shared, tmp_path):
    root, cfg, teacher = shared
    sweep_cfg = replace(cfg, kd_mode="batch_select", train_steps=10, eval_every=10,
                        seeds=(0, 1), out_dir=str(tmp_path / "sweep"))
    rows = sweep(sweep_cfg, "r", [0.0, 1.0], out_csv=str(tmp_path / "sweep.csv"))
    assert len(rows) == 4  # 2 values x 2 seeds
    assert (tmp_path / "sweep.csv").read_text().startswith("parameter,value,seed")
    with pytest.raises(ConfigError):
        sweep(sweep_cfg, "alpha", [0.1, 0.2])


def test_emit_report_empty_diagnostics(tmp_path):
    record = RunRecord(config_hash="deadbeef", out_dir=str(tmp_path))
    paths = emit_report(record, RunDiagnostics(), tmp_path)
    for key in ("metrics", "agreement", "trace", "entropy"):
        text = Path(paths[key]).read_text()
        assert len(text.strip().splitlines()) == 1  # header only
    summary = Path(paths["summary"]).read_text()
    assert "deadbeef" in summary


def test_emit_report_round_trip(tmp_path):
    from selkd.harness import EvalPoint

    record = RunRecord(config_hash="cafe", out_dir=str(tmp_path))
    record.evals = [EvalPoint(10, 1.5, 33.123456789, 0.625),
                    EvalPoint(20, 1.25, 40.0, 0.75)]
    emit_report(record, RunDiagnostics(), tmp_path)
    parsed = load_metrics_csv(Path(tmp_path) / "metrics.csv")
    assert [(p.step, p.train_loss, p.val_bleu, p.val_acc) for p in parsed] == [
        (e.step, e.train_loss, e.val_bleu, e.val_acc) for e in record.evals
    ]
