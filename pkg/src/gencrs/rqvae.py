"""Residual-quantized autoencoder over item embeddings.

Symmetric ReLU MLPs around a stack of codebooks. Each level quantizes the
residual left by the previous one, so an item's code sequence is read off
greedily. Training is plain minibatch gradient descent with decoupled weight
decay and manual numpy backprop; the quantizer passes gradients to the
encoder through the straight-through estimator.

Randomness is split into named streams so tests can replay any stage:
weights use default_rng([seed, 0]), the level-l codebook k-means uses
default_rng([seed, 1, l]), batch shuffling uses default_rng([seed, 2]).
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np

from ._kernels import nearest_codes
from .catalog import EmbeddingMatrix
from .ckpt import load_checkpoint, save_checkpoint

log = logging.getLogger(__name__)

KMEANS_ITERS = 10


class TrainingError(RuntimeError):
    """Training diverged or produced non-finite values."""


@dataclass(frozen=True)
class RqVaeConfig:
    input_dim: int
    encoder_hidden_layers: int = 7
    latent_dim: int = 32
    num_levels: int = 4
    codebook_size: int = 64
    commitment_beta: float = 0.25
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 1024
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.num_levels < 1:
            raise ValueError("num_levels must be >= 1")
        if self.codebook_size < 2:
            raise ValueError("codebook_size must be >= 2")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.commitment_beta < 0:
            raise ValueError("commitment_beta must be >= 0")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if self.encoder_hidden_layers < 0:
            raise ValueError("encoder_hidden_layers must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


@dataclass
class RqVaeModel:
    config: RqVaeConfig
    enc_weights: List[np.ndarray]
    enc_biases: List[np.ndarray]
    dec_weights: List[np.ndarray]
    dec_biases: List[np.ndarray]
    codebooks: np.ndarray  # (L, K, latent_dim)

    def encode(self, X: np.ndarray) -> np.ndarray:
        out, _ = _mlp_forward(np.asarray(X, dtype=np.float64),
                              self.enc_weights, self.enc_biases)
        return out

    def decode(self, Z: np.ndarray) -> np.ndarray:
        out, _ = _mlp_forward(np.asarray(Z, dtype=np.float64),
                              self.dec_weights, self.dec_biases)
        return out


@dataclass(frozen=True)
class QuantizationResult:
    codes: np.ndarray      # (L,) int64
    residuals: np.ndarray  # (L+1, latent_dim); residuals[0] is z itself
    quantized: np.ndarray  # (latent_dim,) sum of selected codewords


def _mlp_forward(X, weights, biases):
    """ReLU MLP with a linear final layer; returns output and backprop cache."""
    acts = [X]
    pres = []
    h = X
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        pre = h @ W + b
        pres.append(pre)
        h = np.maximum(pre, 0.0) if i < last else pre
        acts.append(h)
    return h, (acts, pres)


def _mlp_backward(d_out, weights, cache):
    acts, pres = cache
    n = len(weights)
    g_w = [None] * n
    g_b = [None] * n
    d = d_out
    for i in reversed(range(n)):
        if i < n - 1:
            d = d * (pres[i] > 0.0)
        g_w[i] = acts[i].T @ d
        g_b[i] = d.sum(axis=0)
        d = d @ weights[i].T
    return g_w, g_b, d


def _init_mlp(widths, rng):
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases."""
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def kmeans(points: np.ndarray, k: int, iters: int, rng) -> np.ndarray:
    """Lloyd's algorithm with deterministic seeding.

    Initial centers are drawn without replacement from the distinct rows
    (first-occurrence order); if there are fewer than k distinct rows the
    init falls back to sampling rows with replacement plus small seeded
    jitter. Empty clusters keep their previous center.
    """
    points = np.asarray(points, dtype=np.float64)
    seen = {}
    for i in range(points.shape[0]):
        key = points[i].tobytes()
        if key not in seen:
            seen[key] = i
    uniq = np.fromiter(seen.values(), dtype=np.int64, count=len(seen))
    if uniq.size >= k:
        pick = rng.choice(uniq.size, size=k, replace=False)
        centers = points[uniq[pick]].copy()
    else:
        pick = rng.choice(points.shape[0], size=k, replace=True)
        centers = points[pick] + rng.normal(0.0, 1e-4, size=(k, points.shape[1]))
    for _ in range(iters):
        assign = nearest_codes(points, centers)
        for j in range(k):
            members = points[assign == j]
            if members.shape[0]:
                centers[j] = members.mean(axis=0)
    return centers


def init_model(config: RqVaeConfig, data: EmbeddingMatrix) -> RqVaeModel:
    """Seeded weight init plus per-level k-means codebook init.

    Codebooks are fit level by level on the residuals that the untrained
    encoder produces, so level l+1 sees what level l left unexplained.
    """
    if data.count == 0:
        raise ValueError("data must be nonempty")
    if data.dim != config.input_dim:
        raise ValueError(
            f"data dim {data.dim} does not match config input_dim {config.input_dim}"
        )
    hidden = [config.input_dim] * config.encoder_hidden_layers
    rng = np.random.default_rng([config.seed, 0])
    enc_w, enc_b = _init_mlp([config.input_dim, *hidden, config.latent_dim], rng)
    dec_w, dec_b = _init_mlp([config.latent_dim, *hidden, config.input_dim], rng)

    X = data.rows.astype(np.float64)
    Z, _ = _mlp_forward(X, enc_w, enc_b)
    codebooks = np.empty((config.num_levels, config.codebook_size, config.latent_dim))
    R = Z.copy()
    for level in range(config.num_levels):
        centers = kmeans(R, config.codebook_size, KMEANS_ITERS,
                         np.random.default_rng([config.seed, 1, level]))
        codebooks[level] = centers
        R = R - centers[nearest_codes(R, centers)]
    return RqVaeModel(config=config, enc_weights=enc_w, enc_biases=enc_b,
                      dec_weights=dec_w, dec_biases=dec_b, codebooks=codebooks)


def _quantize_batch(Z: np.ndarray, codebooks: np.ndarray):
    n, d = Z.shape
    levels = codebooks.shape[0]
    codes = np.empty((n, levels), dtype=np.int64)
    residuals = np.empty((n, levels + 1, d))
    quantized = np.zeros((n, d))
    R = Z.astype(np.float64, copy=True)
    residuals[:, 0] = R
    for level in range(levels):
        idx = nearest_codes(R, codebooks[level])
        codes[:, level] = idx
        selected = codebooks[level][idx]
        quantized += selected
        R = R - selected
        residuals[:, level + 1] = R
    return codes, residuals, quantized


def quantize(z: np.ndarray, codebooks: np.ndarray) -> QuantizationResult:
    """Greedy residual quantization of a single latent vector."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] != codebooks.shape[2]:
        raise ValueError(
            f"latent vector shape {z.shape} does not match codebook dim "
            f"{codebooks.shape[2]}"
        )
    codes, residuals, quantized = _quantize_batch(z[None, :], codebooks)
    return QuantizationResult(codes=codes[0], residuals=residuals[0],
                              quantized=quantized[0])


def batch_loss_and_grads(model: RqVaeModel, X: np.ndarray,
                         want_grads: bool = True):
    """Mean loss parts over a batch, plus gradients for every parameter.

    recon flows into the encoder through the straight-through estimator
    (the decoder sees the quantized value, the encoder sees recon's gradient
    unchanged); the codebook term moves only codewords; the commitment term
    moves only the encoder.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    beta = model.config.commitment_beta

    Z, enc_cache = _mlp_forward(X, model.enc_weights, model.enc_biases)
    codes, residuals, quantized = _quantize_batch(Z, model.codebooks)
    X_hat, dec_cache = _mlp_forward(quantized, model.dec_weights, model.dec_biases)

    diff = X_hat - X
    # per level, r^(l) - c_selected^(l) is exactly residuals[:, l+1]
    err = residuals[:, 1:, :]
    recon = float((diff ** 2).sum() / n)
    quant_err = float((err ** 2).sum() / n)
    parts = {
        "recon": recon,
        "codebook": quant_err,
        "commitment": beta * quant_err,
    }
    if not want_grads:
        return parts, None

    d_xhat = 2.0 * diff / n
    g_dec_w, g_dec_b, d_q = _mlp_backward(d_xhat, model.dec_weights, dec_cache)
    # straight-through: d recon/d z = d recon/d q_ste; commitment adds its term
    d_z = d_q + (2.0 * beta / n) * err.sum(axis=1)
    g_enc_w, g_enc_b, _ = _mlp_backward(d_z, model.enc_weights, enc_cache)

    g_cb = np.zeros_like(model.codebooks)
    for level in range(model.codebooks.shape[0]):
        np.add.at(g_cb[level], codes[:, level], -2.0 * err[:, level] / n)
    grads = {
        "enc_w": g_enc_w, "enc_b": g_enc_b,
        "dec_w": g_dec_w, "dec_b": g_dec_b,
        "codebooks": g_cb,
    }
    return parts, grads


def loss(x: np.ndarray, model: RqVaeModel):
    """Total and per-term loss for one input vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.shape[0] != model.config.input_dim:
        raise ValueError(
            f"input shape {x.shape} does not match input_dim {model.config.input_dim}"
        )
    parts, _ = batch_loss_and_grads(model, x[None, :], want_grads=False)
    total = parts["recon"] + parts["codebook"] + parts["commitment"]
    return total, parts


def _apply_update(model: RqVaeModel, grads, lr: float, wd: float) -> None:
    """SGD step; decoupled weight decay touches weight matrices only."""
    for W, g in zip(model.enc_weights, grads["enc_w"]):
        W -= lr * g + lr * wd * W
    for W, g in zip(model.dec_weights, grads["dec_w"]):
        W -= lr * g + lr * wd * W
    for b, g in zip(model.enc_biases, grads["enc_b"]):
        b -= lr * g
    for b, g in zip(model.dec_biases, grads["dec_b"]):
        b -= lr * g
    model.codebooks -= lr * grads["codebooks"]


def train(config: RqVaeConfig, data: EmbeddingMatrix) -> RqVaeModel:
    """Minibatch gradient descent over seeded shuffles of the data."""
    model = init_model(config, data)
    X_all = data.rows.astype(np.float64)
    n = X_all.shape[0]
    shuffle_rng = np.random.default_rng([config.seed, 2])
    for epoch in range(config.epochs):
        perm = shuffle_rng.permutation(n)
        epoch_total = 0.0
        n_batches = 0
        for start in range(0, n, config.batch_size):
            batch = X_all[perm[start:start + config.batch_size]]
            parts, grads = batch_loss_and_grads(model, batch)
            total = parts["recon"] + parts["codebook"] + parts["commitment"]
            if not np.isfinite(total):
                raise TrainingError(
                    f"non-finite loss at epoch {epoch}, batch {n_batches}"
                )
            _apply_update(model, grads, config.learning_rate, config.weight_decay)
            epoch_total += total
            n_batches += 1
        log.debug("rqvae epoch %d mean loss %.6f", epoch, epoch_total / n_batches)
    return model


def assign_ids(model: RqVaeModel, data: EmbeddingMatrix) -> List[QuantizationResult]:
    """Encode then quantize every row, preserving catalog order."""
    if data.dim != model.config.input_dim:
        raise ValueError(
            f"data dim {data.dim} does not match input_dim {model.config.input_dim}"
        )
    Z = model.encode(data.rows.astype(np.float64))
    codes, residuals, quantized = _quantize_batch(Z, model.codebooks)
    return [
        QuantizationResult(codes=codes[i], residuals=residuals[i],
                           quantized=quantized[i])
        for i in range(data.count)
    ]


def codebook_usage(model: RqVaeModel, data: EmbeddingMatrix) -> np.ndarray:
    """Per-level selection counts, (L, K); zero rows are dead codewords."""
    Z = model.encode(data.rows.astype(np.float64))
    codes, _, _ = _quantize_batch(Z, model.codebooks)
    levels, K = model.codebooks.shape[:2]
    usage = np.zeros((levels, K), dtype=np.int64)
    for level in range(levels):
        usage[level] = np.bincount(codes[:, level], minlength=K)
    return usage


def save_model(path, model: RqVaeModel) -> None:
    arrays = {}
    for i, W in enumerate(model.enc_weights):
        arrays[f"enc.W{i}"] = W
    for i, b in enumerate(model.enc_biases):
        arrays[f"enc.b{i}"] = b
    for i, W in enumerate(model.dec_weights):
        arrays[f"dec.W{i}"] = W
    for i, b in enumerate(model.dec_biases):
        arrays[f"dec.b{i}"] = b
    arrays["codebooks"] = model.codebooks
    save_checkpoint(path, "rqvae", arrays, config=asdict(model.config))


def load_model(path) -> RqVaeModel:
    _, config, _, arrays = load_checkpoint(path, expect_kind="rqvae")
    cfg = RqVaeConfig(**config)
    n_layers = cfg.encoder_hidden_layers + 1
    return RqVaeModel(
        config=cfg,
        enc_weights=[arrays[f"enc.W{i}"] for i in range(n_layers)],
        enc_biases=[arrays[f"enc.b{i}"] for i in range(n_layers)],
        dec_weights=[arrays[f"dec.W{i}"] for i in range(n_layers)],
        dec_biases=[arrays[f"dec.b{i}"] for i in range(n_layers)],
        codebooks=arrays["codebooks"],
    )
