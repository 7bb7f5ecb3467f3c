"""Small encoder-decoder transformer, instantiable as teacher or student.

Post-norm residual blocks, sinusoidal positions, multi-head attention.
Reserved token ids: 0 = start, 1 = end, 2 = pad, in both vocabularies.
All forwards are deterministic given the dropout generator (None disables
dropout, i.e. evaluation mode).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict

import numpy as np

from . import rng as rng_mod
from .checkpoint import load_sidecar, load_tensors, save_sidecar, save_tensors
from .errors import ConfigError, ContractError
from .tensor import (
    Tape,
    Tensor,
    add,
    dropout,
    embedding_lookup,
    gather_last,
    layer_norm,
    log_softmax,
    matmul,
    mul,
    reshape,
    softmax,
    transpose,
)

BOS, EOS, PAD = 0, 1, 2
NEG_BIAS = -1e9
LN_EPS = 1e-5


@dataclass
class TransformerConfig:
    enc_layers: int = 2
    dec_layers: int = 2
    d_model: int = 64
    d_ff: int = 128
    n_heads: int = 4
    src_vocab: int = 64
    tgt_vocab: int = 64
    dropout: float = 0.1
    max_len: int = 32
    tie_embeddings: bool = False

    def validate(self) -> "TransformerConfig":
        for name in ("enc_layers", "dec_layers", "d_model", "d_ff", "n_heads",
                     "src_vocab", "tgt_vocab", "max_len"):
            if getattr(self, name) < 1:
                raise ConfigError(f"config field '{name}' must be positive")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"config field 'n_heads': d_model={self.d_model} not divisible by {self.n_heads}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("config field 'dropout' must be in [0, 1)")
        if self.src_vocab <= PAD or self.tgt_vocab <= PAD:
            raise ConfigError("config field 'src_vocab'/'tgt_vocab' must exceed reserved ids")
        return self


@dataclass
class ModelParams:
    """Named tensor collection plus the config that shaped it."""

    config: TransformerConfig
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


@dataclass
class Hypothesis:
    tokens: list[int]  # ends with EOS
    log_prob: float

    @property
    def content(self) -> list[int]:
        return self.tokens[:-1]


def init_params(config: TransformerConfig, seed: int) -> ModelParams:
    """Deterministic fan-in scaled initialization."""
    config.validate()
    rng = rng_mod.rng_for(seed, rng_mod.INIT)
    d, ff = config.d_model, config.d_ff
    t: dict[str, Tensor] = {}

    def emb(name, vocab):
        t[name] = Tensor(rng.normal(0.0, d**-0.5, size=(vocab, d)), requires_grad=True)

    def linear(name, fan_in, fan_out):
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        t[name + ".w"] = Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                                requires_grad=True)
        t[name + ".b"] = Tensor(np.zeros(fan_out), requires_grad=True)

    def ln(name):
        t[name + ".gain"] = Tensor(np.ones(d), requires_grad=True)
        t[name + ".bias"] = Tensor(np.zeros(d), requires_grad=True)

    def attn(prefix):
        # no key bias: softmax scores are invariant to a per-query constant,
        # so a key bias is a dead parameter with an identically zero gradient
        for proj in ("wq", "wv", "wo"):
            linear(f"{prefix}.{proj}", d, d)
        bound = math.sqrt(6.0 / (d + d))
        t[f"{prefix}.wk.w"] = Tensor(rng.uniform(-bound, bound, size=(d, d)),
                                     requires_grad=True)

    emb("src_embed", config.src_vocab)
    emb("tgt_embed", config.tgt_vocab)
    for i in range(config.enc_layers):
        attn(f"enc{i}.attn")
        ln(f"enc{i}.ln1")
        linear(f"enc{i}.ff1", d, ff)
        linear(f"enc{i}.ff2", ff, d)
        ln(f"enc{i}.ln2")
    for i in range(config.dec_layers):
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln2")
        linear(f"dec{i}.ff1", d, ff)
        linear(f"dec{i}.ff2", ff, d)
        ln(f"dec{i}.ln3")
    if not config.tie_embeddings:
        linear("out_proj", d, config.tgt_vocab)
    else:
        t["out_proj.b"] = Tensor(np.zeros(config.tgt_vocab), requires_grad=True)
    return ModelParams(config=config, tensors=t)


# -- forward pieces -------------------------------------------------------


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(d_model)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, 2.0 * (i // 2) / d_model)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


def _linear(t, prefix, x):
    return add(matmul(x, t[prefix + ".w"]), t[prefix + ".b"])


def _split_heads(x, n_heads):
    b, ln, d = x.shape
    return transpose(reshape(x, (b, ln, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x):
    b, h, ln, dh = x.shape
    return reshape(transpose(x, (0, 2, 1, 3)), (b, ln, h * dh))


def _attention(t, prefix, x_q, x_kv, bias, n_heads, rate, rng):
    dh = x_q.shape[-1] // n_heads
    q = _split_heads(_linear(t, prefix + ".wq", x_q), n_heads)
    k = _split_heads(matmul(x_kv, t[prefix + ".wk.w"]), n_heads)
    v = _split_heads(_linear(t, prefix + ".wv", x_kv), n_heads)
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    scores = add(scores, Tensor(bias))
    weights = dropout(softmax(scores), rate, rng)
    ctx = _merge_heads(matmul(weights, v))
    return _linear(t, prefix + ".wo", ctx)


def _ffn(t, prefix, x, rate, rng):
    h = dropout(_linear(t, prefix + "1", x).relu(), rate, rng)
    return _linear(t, prefix + "2", h)


def _sublayer(t, ln_prefix, x, sub_out, rate, rng):
    return layer_norm(add(x, dropout(sub_out, rate, rng)),
                      t[ln_prefix + ".gain"], t[ln_prefix + ".bias"], LN_EPS)


def _pad_bias(mask: np.ndarray) -> np.ndarray:
    # mask: (B, L) True on real tokens -> additive bias (B, 1, 1, L)
    return np.where(mask[:, None, None, :], 0.0, NEG_BIAS)


def _causal_bias(length: int) -> np.ndarray:
    upper = np.triu(np.full((length, length), NEG_BIAS), k=1)
    return upper[None, None, :, :]


def _embed(t, table_name, ids, config, rng):
    d = config.d_model
    x = mul(embedding_lookup(t[table_name], ids), math.sqrt(d))
    pe = sinusoidal_positions(config.max_len, d)[: ids.shape[1]]
    return dropout(add(x, Tensor(pe[None, :, :])), config.dropout, rng)


def encode(params: ModelParams, src_ids: np.ndarray, src_mask: np.ndarray,
           dropout_rng=None) -> Tensor:
    """Contextual states for every source position, (B, S, d_model).

    Padded positions are excluded as attention keys so real positions never
    read them.
    """
    cfg, t, rate = params.config, params.tensors, params.config.dropout
    x = _embed(t, "src_embed", src_ids, cfg, dropout_rng)
    bias = _pad_bias(src_mask)
    for i in range(cfg.enc_layers):
        a = _attention(t, f"enc{i}.attn", x, x, bias, cfg.n_heads, rate, dropout_rng)
        x = _sublayer(t, f"enc{i}.ln1", x, a, rate, dropout_rng)
        f = _ffn(t, f"enc{i}.ff", x, rate, dropout_rng)
        x = _sublayer(t, f"enc{i}.ln2", x, f, rate, dropout_rng)
    return x


def decode_logits(params: ModelParams, tgt_prefix_ids: np.ndarray, enc_states: Tensor,
                  src_mask: np.ndarray, tgt_mask: np.ndarray | None = None,
                  dropout_rng=None) -> Tensor:
    """Next-token logits at every prefix position, (B, T, tgt_vocab).

    Causal masking guarantees position j sees only target positions < j
    plus the encoder states.
    """
    cfg, t, rate = params.config, params.tensors, params.config.dropout
    tlen = tgt_prefix_ids.shape[1]
    if tlen > cfg.max_len:
        raise ContractError(f"target prefix length {tlen} exceeds max_len {cfg.max_len}")
    x = _embed(t, "tgt_embed", tgt_prefix_ids, cfg, dropout_rng)
    self_bias = _causal_bias(tlen)
    if tgt_mask is not None:
        self_bias = self_bias + _pad_bias(tgt_mask)
    cross_bias = _pad_bias(src_mask)
    for i in range(cfg.dec_layers):
        a = _attention(t, f"dec{i}.self", x, x, self_bias, cfg.n_heads, rate, dropout_rng)
        x = _sublayer(t, f"dec{i}.ln1", x, a, rate, dropout_rng)
        c = _attention(t, f"dec{i}.cross", x, enc_states, cross_bias, cfg.n_heads, rate,
                       dropout_rng)
        x = _sublayer(t, f"dec{i}.ln2", x, c, rate, dropout_rng)
        f = _ffn(t, f"dec{i}.ff", x, rate, dropout_rng)
        x = _sublayer(t, f"dec{i}.ln3", x, f, rate, dropout_rng)
    if cfg.tie_embeddings:
        return add(matmul(x, transpose(t["tgt_embed"], (1, 0))), t["out_proj.b"])
    return _linear(t, "out_proj", x)


def forward_logits(params: ModelParams, src_ids, src_mask, tgt_in_ids, tgt_mask,
                   dropout_rng=None) -> Tensor:
    enc = encode(params, src_ids, src_mask, dropout_rng)
    return decode_logits(params, tgt_in_ids, enc, src_mask, tgt_mask, dropout_rng)


def sequence_log_prob(params: ModelParams, src: list[int], tgt: list[int]) -> float:
    """Teacher-forced log-probability of tgt + EOS given src (eval mode)."""
    src_ids = np.asarray([src], dtype=np.int64)
    src_mask = np.ones_like(src_ids, dtype=bool)
    tgt_in = np.asarray([[BOS] + list(tgt)], dtype=np.int64)
    tgt_out = np.asarray([list(tgt) + [EOS]], dtype=np.int64)
    logits = forward_logits(params, src_ids, src_mask, tgt_in,
                            np.ones_like(tgt_in, dtype=bool))
    logp = gather_last(log_softmax(logits), tgt_out)
    return float(logp.data.sum())


# -- decoding -------------------------------------------------------------


def greedy_decode_batch(params: ModelParams, src_ids: np.ndarray,
                        src_mask: np.ndarray) -> list[Hypothesis]:
    """Argmax decoding for a whole batch at once; deterministic."""
    cfg = params.config
    bsz = src_ids.shape[0]
    enc = encode(params, src_ids, src_mask)
    max_content = cfg.max_len - 2
    prefix = np.full((bsz, 1), BOS, dtype=np.int64)
    done = np.zeros(bsz, dtype=bool)
    tokens: list[list[int]] = [[] for _ in range(bsz)]
    logps = np.zeros(bsz)
    for step in range(max_content + 1):
        logits = decode_logits(params, prefix, enc, src_mask)
        rows = log_softmax(logits).data[:, -1, :]
        picks = np.full(bsz, PAD, dtype=np.int64)
        for b in range(bsz):
            if done[b]:
                continue
            # out of content room: close the hypothesis with the end symbol
            tok = EOS if step == max_content else int(rows[b].argmax())
            picks[b] = tok
            logps[b] += rows[b, tok]
            tokens[b].append(tok)
            if tok == EOS:
                done[b] = True
        if done.all():
            break
        prefix = np.concatenate([prefix, np.where(done, PAD, picks)[:, None]], axis=1)
    return [Hypothesis(tokens=tokens[b], log_prob=float(logps[b])) for b in range(bsz)]


def greedy_decode(params: ModelParams, src_ids: list[int]) -> Hypothesis:
    ids = np.asarray([src_ids], dtype=np.int64)
    return greedy_decode_batch(params, ids, np.ones_like(ids, dtype=bool))[0]


def beam_search(params: ModelParams, src_ids: list[int], beam: int = 4,
                length_penalty: float = 0.0) -> Hypothesis:
    """Highest-scoring finished hypothesis under log-prob / len^penalty.

    Candidates are ranked by cumulative log-prob with stable tie-breaking
    (earlier beam, then lower token id), so beam=1 reproduces greedy
    decoding exactly.
    """
    if beam < 1:
        raise ContractError(f"beam must be >= 1, got {beam}")
    cfg = params.config
    ids = np.asarray([src_ids], dtype=np.int64)
    mask = np.ones_like(ids, dtype=bool)
    enc = encode(params, ids, mask)
    max_content = cfg.max_len - 2

    live: list[tuple[list[int], float]] = [([], 0.0)]
    finished: list[Hypothesis] = []
    for step in range(max_content):
        rows = _next_log_probs(params, live, enc, mask)
        scores = np.asarray([lp for _, lp in live])[:, None] + rows  # (n_live, V)
        flat = scores.reshape(-1)
        order = np.argsort(-flat, kind="stable")[: beam]
        new_live = []
        for idx in order:
            b, tok = divmod(int(idx), rows.shape[1])
            toks = live[b][0] + [tok]
            lp = float(flat[idx])
            if tok == EOS:
                finished.append(Hypothesis(tokens=toks, log_prob=lp))
            else:
                new_live.append((toks, lp))
        live = new_live
        if not live:
            break
    if live:
        rows = _next_log_probs(params, live, enc, mask)
        for b, (toks, lp) in enumerate(live):
            finished.append(Hypothesis(tokens=toks + [EOS], log_prob=lp + float(rows[b, EOS])))

    def norm_score(h: Hypothesis) -> float:
        return h.log_prob / max(1, len(h.content)) ** length_penalty

    best = max(range(len(finished)), key=lambda i: norm_score(finished[i]))
    return finished[best]


def _next_log_probs(params, live, enc, src_mask) -> np.ndarray:
    """Log-prob rows for the next position of every live prefix."""
    n = len(live)
    maxlen = max(len(toks) for toks, _ in live) + 1
    prefix = np.full((n, maxlen), PAD, dtype=np.int64)
    prefix[:, 0] = BOS
    pos = np.zeros(n, dtype=np.int64)
    for b, (toks, _) in enumerate(live):
        prefix[b, 1 : 1 + len(toks)] = toks
        pos[b] = len(toks)
    enc_rep = Tensor(np.repeat(enc.data[:1], n, axis=0))
    mask_rep = np.repeat(src_mask[:1], n, axis=0)
    tgt_mask = np.arange(maxlen)[None, :] <= pos[:, None]
    logits = decode_logits(params, prefix, enc_rep, mask_rep, tgt_mask)
    logp = log_softmax(logits).data
    return logp[np.arange(n), pos, :]


# -- persistence ----------------------------------------------------------


def save_model(path, params: ModelParams, meta: dict | None = None) -> None:
    """Binary tensors at `path`, config + metadata at `path + '.json'`."""
    save_tensors(path, {k: v.data for k, v in params.tensors.items()})
    payload = {"config": asdict(params.config), "meta": meta or {}}
    save_sidecar(str(path) + ".json", payload)


def load_model(path) -> tuple[ModelParams, dict]:
    arrays = load_tensors(path)
    payload = load_sidecar(str(path) + ".json")
    config = TransformerConfig(**payload["config"]).validate()
    tensors = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return ModelParams(config=config, tensors=tensors), payload.get("meta", {})
