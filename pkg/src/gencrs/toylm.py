"""Tiny decoder-only language model, trained from scratch with numpy.

Pre-norm transformer blocks (causal multi-head attention, ReLU feed-forward
of width 4*d_model), learned positions, and an output projection weight-tied
to the token embeddings. All gradients are hand-derived; the optimizer is
plain minibatch descent with decoupled weight decay, so finite-difference
checks are exact up to float noise.

The NEW_TOKENS_ONLY embedding policy zeroes gradient rows of base-vocabulary
tokens (everything below ``new_token_start``); because the projection is
tied, the freeze covers both the input and output roles of those rows.
"""

from __future__ import annotations

import hashlib
import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Sequence, Tuple

import numpy as np

from .ckpt import load_checkpoint, save_checkpoint
from .corpus import StructuredSample, Tokenizer

log = logging.getLogger(__name__)

ALL = "ALL"
NEW_TOKENS_ONLY = "NEW_TOKENS_ONLY"
_NEG_INF = -1e30
_LN_EPS = 1e-5


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite values."""


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    n_heads: int = 4
    context_len: int = 256
    learning_rate: float = 0.5
    weight_decay: float = 1e-4
    batch_size: int = 16
    steps: int = 2000
    seed: int = 0
    trainable_embedding_policy: str = ALL
    new_token_start: int = 0

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.vocab_size < 2:
            raise ValueError("vocab_size must be >= 2")
        if self.context_len < 1:
            raise ValueError("context_len must be >= 1")
        if self.trainable_embedding_policy not in (ALL, NEW_TOKENS_ONLY):
            raise ValueError(
                f"unknown embedding policy {self.trainable_embedding_policy!r}")
        if not 0 <= self.new_token_start <= self.vocab_size:
            raise ValueError("new_token_start outside vocabulary")


@dataclass
class LmModel:
    config: LmConfig
    params: Dict[str, np.ndarray]


def _layer_keys(i: int) -> List[str]:
    p = f"l{i}."
    return [p + k for k in (
        "ln1.g", "ln1.b", "Wq", "bq", "Wk", "bk", "Wv", "bv", "Wo", "bo",
        "ln2.g", "ln2.b", "W1", "b1", "W2", "b2")]


def init_lm(config: LmConfig) -> LmModel:
    rng = np.random.default_rng([config.seed, 0])
    d = config.d_model
    params: Dict[str, np.ndarray] = {
        "E": rng.normal(0.0, 0.02, size=(config.vocab_size, d)),
        "P": rng.normal(0.0, 0.02, size=(config.context_len, d)),
    }
    for i in range(config.n_layers):
        p = f"l{i}."
        params[p + "ln1.g"] = np.ones(d)
        params[p + "ln1.b"] = np.zeros(d)
        for name in ("Wq", "Wk", "Wv", "Wo"):
            params[p + name] = rng.normal(0.0, 0.02, size=(d, d))
        for name in ("bq", "bk", "bv", "bo"):
            params[p + name] = np.zeros(d)
        params[p + "ln2.g"] = np.ones(d)
        params[p + "ln2.b"] = np.zeros(d)
        params[p + "W1"] = rng.normal(0.0, 0.02, size=(d, 4 * d))
        params[p + "b1"] = np.zeros(4 * d)
        params[p + "W2"] = rng.normal(0.0, 0.02, size=(4 * d, d))
        params[p + "b2"] = np.zeros(d)
    params["lnf.g"] = np.ones(d)
    params["lnf.b"] = np.zeros(d)
    return LmModel(config=config, params=params)


def _ln_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = xc * inv
    return xhat * g + b, (xhat, inv, g)


def _ln_backward(dy, cache):
    xhat, inv, g = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    mean1 = dxhat.mean(axis=-1, keepdims=True)
    mean2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
    dx = inv * (dxhat - mean1 - xhat * mean2)
    return dx, dg, db


def _softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    b, t, d = x.shape
    return x.reshape(b, t, n_heads, d // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x):
    b, h, t, hd = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, t, h * hd)


def _forward(model: LmModel, X: np.ndarray):
    """Batched forward pass; returns logits and the full backprop cache."""
    cfg, P = model.config, model.params
    batch, t = X.shape
    if t > cfg.context_len:
        raise ValueError(f"sequence length {t} exceeds context {cfg.context_len}")
    if X.min() < 0 or X.max() >= cfg.vocab_size:
        raise ValueError("token id out of range")
    causal = np.triu(np.full((t, t), _NEG_INF), k=1)

    x = P["E"][X] + P["P"][:t]
    cache = {"X": X, "t": t, "layers": []}
    for i in range(cfg.n_layers):
        p = f"l{i}."
        lc: Dict[str, object] = {"x_in": x}
        h1, lc["ln1"] = _ln_forward(x, P[p + "ln1.g"], P[p + "ln1.b"])
        lc["h1"] = h1
        q = _split_heads(h1 @ P[p + "Wq"] + P[p + "bq"], cfg.n_heads)
        k = _split_heads(h1 @ P[p + "Wk"] + P[p + "bk"], cfg.n_heads)
        v = _split_heads(h1 @ P[p + "Wv"] + P[p + "bv"], cfg.n_heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        scores = q @ k.transpose(0, 1, 3, 2) * scale + causal
        attn = _softmax(scores)
        ctx = attn @ v
        merged = _merge_heads(ctx)
        proj = merged @ P[p + "Wo"] + P[p + "bo"]
        x = x + proj
        lc.update(q=q, k=k, v=v, attn=attn, merged=merged, scale=scale)

        lc["x_mid"] = x
        h2, lc["ln2"] = _ln_forward(x, P[p + "ln2.g"], P[p + "ln2.b"])
        lc["h2"] = h2
        pre = h2 @ P[p + "W1"] + P[p + "b1"]
        act = np.maximum(pre, 0.0)
        x = x + act @ P[p + "W2"] + P[p + "b2"]
        lc.update(pre=pre, act=act)
        cache["layers"].append(lc)

    hf, lnf_cache = _ln_forward(x, P["lnf.g"], P["lnf.b"])
    cache["lnf"] = lnf_cache
    cache["hf"] = hf
    logits = hf @ P["E"].T
    return logits, cache


def _backward(model: LmModel, cache, d_logits) -> Dict[str, np.ndarray]:
    cfg, P = model.config, model.params
    grads = {k: np.zeros_like(v) for k, v in P.items()}
    hf, X = cache["hf"], cache["X"]

    grads["E"] += np.einsum("btv,btd->vd", d_logits, hf)
    d_hf = d_logits @ P["E"]
    dx, dg, db = _ln_backward(d_hf, cache["lnf"])
    grads["lnf.g"] += dg
    grads["lnf.b"] += db

    for i in reversed(range(cfg.n_layers)):
        p = f"l{i}."
        lc = cache["layers"][i]
        # feed-forward sublayer
        d_ffn_out = dx
        grads[p + "b2"] += d_ffn_out.sum(axis=(0, 1))
        grads[p + "W2"] += np.einsum("btf,btd->fd", lc["act"], d_ffn_out)
        d_act = d_ffn_out @ P[p + "W2"].T
        d_pre = d_act * (lc["pre"] > 0.0)
        grads[p + "b1"] += d_pre.sum(axis=(0, 1))
        grads[p + "W1"] += np.einsum("btd,btf->df", lc["h2"], d_pre)
        d_h2 = d_pre @ P[p + "W1"].T
        d_mid, dg, db = _ln_backward(d_h2, lc["ln2"])
        grads[p + "ln2.g"] += dg
        grads[p + "ln2.b"] += db
        dx = dx + d_mid

        # attention sublayer
        d_attn_out = dx
        grads[p + "bo"] += d_attn_out.sum(axis=(0, 1))
        grads[p + "Wo"] += np.einsum("btm,btd->md", lc["merged"], d_attn_out)
        d_merged = d_attn_out @ P[p + "Wo"].T
        d_ctx = _split_heads(d_merged, cfg.n_heads)
        attn, q, k, v = lc["attn"], lc["q"], lc["k"], lc["v"]
        d_attn = d_ctx @ v.transpose(0, 1, 3, 2)
        d_v = attn.transpose(0, 1, 3, 2) @ d_ctx
        d_scores = attn * (d_attn - (d_attn * attn).sum(axis=-1, keepdims=True))
        d_scores *= lc["scale"]
        d_q = d_scores @ k
        d_k = d_scores.transpose(0, 1, 3, 2) @ q
        d_q, d_k, d_v = (_merge_heads(a) for a in (d_q, d_k, d_v))
        h1 = lc["h1"]
        grads[p + "Wq"] += np.einsum("btd,bte->de", h1, d_q)
        grads[p + "Wk"] += np.einsum("btd,bte->de", h1, d_k)
        grads[p + "Wv"] += np.einsum("btd,bte->de", h1, d_v)
        grads[p + "bq"] += d_q.sum(axis=(0, 1))
        grads[p + "bk"] += d_k.sum(axis=(0, 1))
        grads[p + "bv"] += d_v.sum(axis=(0, 1))
        d_h1 = d_q @ P[p + "Wq"].T + d_k @ P[p + "Wk"].T + d_v @ P[p + "Wv"].T
        d_in, dg, db = _ln_backward(d_h1, lc["ln1"])
        grads[p + "ln1.g"] += dg
        grads[p + "ln1.b"] += db
        dx = dx + d_in

    t = cache["t"]
    grads["P"][:t] += dx.sum(axis=0)
    flat_ids = X.reshape(-1)
    np.add.at(grads["E"], flat_ids, dx.reshape(-1, cfg.d_model))
    return grads


def logits(model: LmModel, tokens: Sequence[int]) -> np.ndarray:
    """Per-position scores over the vocabulary for one sequence."""
    X = np.asarray(tokens, dtype=np.int64)[None, :]
    out, _ = _forward(model, X)
    return out[0]


def next_token_logprobs(model: LmModel, rows: Sequence[Sequence[int]]) -> np.ndarray:
    """Log-softmax over the vocabulary after each row; rows share one length."""
    X = np.asarray(rows, dtype=np.int64)
    out, _ = _forward(model, X)
    last = out[:, -1, :]
    last = last - last.max(axis=-1, keepdims=True)
    return last - np.log(np.exp(last).sum(axis=-1, keepdims=True))


def sample_sequences(sample: StructuredSample, context_len: int):
    """(inputs, labels, loss positions) with left-truncated context."""
    ctx = list(sample.context_tokens)
    tgt = list(sample.target_tokens)
    if not tgt:
        raise ValueError("sample has an empty target")
    if len(tgt) - 1 > context_len:
        raise ValueError(
            f"target of {len(tgt)} tokens cannot fit context {context_len}")
    over = len(ctx) + len(tgt) - 1 - context_len
    if over > 0:
        ctx = ctx[over:]
    seq = ctx + tgt
    inputs = seq[:-1]
    labels = seq[1:]
    n_ctx = len(ctx)
    mask = [1.0 if i >= n_ctx - 1 else 0.0 for i in range(len(labels))]
    return inputs, labels, mask


def _batch_arrays(samples: Sequence[StructuredSample], context_len: int,
                  pad_id: int = 0):
    rows = [sample_sequences(s, context_len) for s in samples]
    t = max(len(r[0]) for r in rows)
    n = len(rows)
    X = np.full((n, t), pad_id, dtype=np.int64)
    Y = np.zeros((n, t), dtype=np.int64)
    M = np.zeros((n, t))
    for i, (inputs, labels, mask) in enumerate(rows):
        X[i, :len(inputs)] = inputs
        Y[i, :len(labels)] = labels
        M[i, :len(mask)] = mask
    return X, Y, M


def batch_loss_and_grads(model: LmModel, samples: Sequence[StructuredSample],
                         want_grads: bool = True):
    """Token-pooled mean NLL over every target token in the batch."""
    X, Y, M = _batch_arrays(samples, model.config.context_len)
    lg, cache = _forward(model, X)
    probs = _softmax(lg)
    total = M.sum()
    rows = np.arange(X.shape[0])[:, None], np.arange(X.shape[1])[None, :]
    picked = probs[rows[0], rows[1], Y]
    nll = -(np.log(picked) * M).sum() / total
    if not want_grads:
        return float(nll), None
    d_logits = probs.copy()
    d_logits[rows[0], rows[1], Y] -= 1.0
    d_logits *= (M / total)[:, :, None]
    grads = _backward(model, cache, d_logits)
    if model.config.trainable_embedding_policy == NEW_TOKENS_ONLY:
        grads["E"][: model.config.new_token_start] = 0.0
    return float(nll), grads


def ntp_loss(model: LmModel, sample: StructuredSample) -> float:
    """Mean NLL over the sample's target tokens, context masked out."""
    loss, _ = batch_loss_and_grads(model, [sample], want_grads=False)
    return loss


_NO_DECAY_SUFFIXES = (".g", ".b", "bq", "bk", "bv", "bo", "b1", "b2")


def _decays(name: str) -> bool:
    """Decoupled decay applies to weight matrices, not embeddings/LN/biases."""
    if name in ("E", "P"):
        return False
    return not name.endswith(_NO_DECAY_SUFFIXES)


def train_lm(config: LmConfig, samples: Sequence[StructuredSample]) -> LmModel:
    """Seeded minibatch descent for config.steps steps."""
    if not samples:
        raise ValueError("samples must be nonempty")
    model = init_lm(config)
    rng = np.random.default_rng([config.seed, 2])
    n = len(samples)
    for step in range(config.steps):
        idx = rng.integers(0, n, size=min(config.batch_size, n))
        batch = [samples[i] for i in idx]
        loss, grads = batch_loss_and_grads(model, batch)
        if not np.isfinite(loss):
            raise TrainingError(f"non-finite loss at step {step}")
        lr, wd = config.learning_rate, config.weight_decay
        for name, g in grads.items():
            p = model.params[name]
            if _decays(name):
                p -= lr * g + lr * wd * p
            else:
                p -= lr * g
        if step % 200 == 0:
            log.debug("lm step %d loss %.4f", step, loss)
    return model


def vocab_hash(tokenizer: Tokenizer) -> str:
    joined = "\n".join(tokenizer.id_to_token).encode("utf-8")
    return hashlib.sha256(joined).hexdigest()


def save_lm(path, model: LmModel, vocab_sha256: str = "") -> None:
    save_checkpoint(path, "toylm", dict(sorted(model.params.items())),
                    config=asdict(model.config),
                    extra={"vocab_sha256": vocab_sha256})


def load_lm(path, expect_vocab_sha256: str = None) -> LmModel:
    _, config, extra, arrays = load_checkpoint(path, expect_kind="toylm")
    if expect_vocab_sha256 is not None:
        found = extra.get("vocab_sha256", "")
        if found != expect_vocab_sha256:
            raise ValueError(
                f"{path}: checkpoint was trained with a different vocabulary "
                f"({found[:12]}… != {expect_vocab_sha256[:12]}…)")
    return LmModel(config=LmConfig(**config), params=dict(arrays))
