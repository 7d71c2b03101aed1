"""Dimension-preserving image/text adapters and their contrastive fine-tuning.

Each adapter is a one-hidden-layer MLP blended with a residual path:

    adapted(x) = blend * (w2 @ relu(w1 @ x + b1) + b2) + (1 - blend) * x

Fine-tuning minimizes an image-to-class softmax contrastive loss over the
full class text bank, with analytic gradients (no autodiff). All math runs
in float64; the finite-difference tests are the correctness authority.
"""

from __future__ import annotations

import struct
import time
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigInvalid,
    DimensionMismatch,
    EmptyBatch,
    MagicMismatch,
    NonFiniteLoss,
    TruncatedFile,
    VersionUnsupported,
)
from .store import ClassTextBank, EmbeddingTable

ADP_MAGIC = b"ADP1"
ADP_VERSION = 1


@dataclass
class AdapterParams:
    """Weights of one dimension-preserving adapter."""

    w1: np.ndarray  # (dim, dim)
    b1: np.ndarray  # (dim,)
    w2: np.ndarray  # (dim, dim)
    b2: np.ndarray  # (dim,)
    blend: float = 0.2  # residual mixing ratio in [0, 1]

    @property
    def dim(self) -> int:
        return self.w1.shape[0]

    def validate(self) -> None:
        d = self.dim
        if self.w1.shape != (d, d) or self.w2.shape != (d, d):
            raise DimensionMismatch("adapter weight matrices must be dim x dim")
        if self.b1.shape != (d,) or self.b2.shape != (d,):
            raise DimensionMismatch("adapter biases must be dim vectors")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.all(np.isfinite(arr)):
                raise NonFiniteLoss("adapter parameters contain non-finite values")
        if not (0.0 <= self.blend <= 1.0):
            raise ConfigInvalid(f"blend must lie in [0, 1], got {self.blend}")

    def copy(self) -> "AdapterParams":
        return AdapterParams(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(), self.blend
        )


@dataclass
class AdaptConfig:
    """Knobs for adapter fine-tuning; every value is surfaced, none hard-coded."""

    epochs: int = 25
    batch_size: int = 256
    learning_rate: float = 1e-3
    temperature: float = 0.07
    seed: int = 0
    blend: float = 0.2
    momentum: float = 0.9

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigInvalid(f"epochs must be >= 1, got {self.epochs}")
        if not (0.0 < self.temperature <= 1.0):
            raise ConfigInvalid(f"temperature must lie in (0, 1], got {self.temperature}")
        if self.batch_size < 2:
            raise ConfigInvalid(f"batch_size must be >= 2, got {self.batch_size}")
        if self.learning_rate < 0:
            raise ConfigInvalid("learning_rate must be non-negative")
        if not (0.0 <= self.blend <= 1.0):
            raise ConfigInvalid(f"blend must lie in [0, 1], got {self.blend}")


def init_params(dim: int, blend: float, rng: np.random.Generator) -> AdapterParams:
    """Small random MLP; with a low blend the adapter starts near identity."""
    scale = 1.0 / np.sqrt(dim)
    return AdapterParams(
        w1=rng.normal(0.0, scale, size=(dim, dim)),
        b1=np.zeros(dim),
        w2=rng.normal(0.0, scale, size=(dim, dim)),
        b2=np.zeros(dim),
        blend=blend,
    )


def adapter_forward(params: AdapterParams, x: np.ndarray) -> np.ndarray:
    """Apply the adapter to one vector or a stack of row vectors (float64)."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xs = x[None, :] if single else x
    if xs.shape[1] != params.dim:
        raise DimensionMismatch(
            f"input dim {xs.shape[1]} != adapter dim {params.dim}"
        )
    z = xs @ params.w1.T + params.b1
    h = np.maximum(z, 0.0)
    m = h @ params.w2.T + params.b2
    out = params.blend * m + (1.0 - params.blend) * xs
    return out[0] if single else out


def _forward_cached(params: AdapterParams, xs: np.ndarray):
    """Forward pass keeping the intermediates the backward pass needs."""
    z = xs @ params.w1.T + params.b1
    h = np.maximum(z, 0.0)
    m = h @ params.w2.T + params.b2
    out = params.blend * m + (1.0 - params.blend) * xs
    return out, z, h


def _backward(params: AdapterParams, xs, z, h, d_out) -> AdapterParams:
    """Gradients of a scalar loss w.r.t. adapter params, given d loss / d output."""
    dm = params.blend * d_out
    dw2 = dm.T @ h
    db2 = dm.sum(axis=0)
    dh = dm @ params.w2
    dz = dh * (z > 0.0)
    dw1 = dz.T @ xs
    db1 = dz.sum(axis=0)
    return AdapterParams(w1=dw1, b1=db1, w2=dw2, b2=db2, blend=0.0)


def _normalize_with_grad(u: np.ndarray):
    """Row-normalize u and return a closure mapping d loss/d(unit rows) back to u."""
    norms = np.linalg.norm(u, axis=1, keepdims=True)
    a = u / norms

    def backprop(g: np.ndarray) -> np.ndarray:
        return (g - (g * a).sum(axis=1, keepdims=True) * a) / norms

    return a, backprop


def infonce_loss(
    params_i: AdapterParams,
    params_t: AdapterParams,
    batch: EmbeddingTable,
    bank: ClassTextBank,
    temperature: float,
) -> tuple[float, AdapterParams, AdapterParams]:
    """Contrastive image-to-class loss and its analytic parameter gradients.

    Per sample: -log softmax over all K classes of cos(adapted image,
    adapted class text) / temperature, averaged over the batch. Returns
    (loss, image-adapter grads, text-adapter grads).
    """
    if batch.n == 0:
        raise EmptyBatch("infonce_loss needs a non-empty batch")
    xs = np.asarray(batch.embeddings, dtype=np.float64)
    ts = np.asarray(bank.text_embeddings, dtype=np.float64)
    if xs.shape[1] != params_i.dim or ts.shape[1] != params_t.dim:
        raise DimensionMismatch("batch/bank dim does not match adapter dim")
    labels = np.asarray(batch.labels)
    b, k = xs.shape[0], ts.shape[0]

    u_img, z_i, h_i = _forward_cached(params_i, xs)
    u_txt, z_t, h_t = _forward_cached(params_t, ts)
    a, back_a = _normalize_with_grad(u_img)
    t, back_t = _normalize_with_grad(u_txt)

    logits = (a @ t.T) / temperature  # (b, k)
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    denom = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(denom)
    loss = float(-log_probs[np.arange(b), labels].mean())
    if not np.isfinite(loss):
        raise NonFiniteLoss(f"loss is {loss}")

    # d loss / d logits = (softmax - onehot) / b
    g_logits = exp / denom
    g_logits[np.arange(b), labels] -= 1.0
    g_logits /= b

    g_a = (g_logits @ t) / temperature
    g_t = (g_logits.T @ a) / temperature
    grads_i = _backward(params_i, xs, z_i, h_i, back_a(g_a))
    grads_t = _backward(params_t, ts, z_t, h_t, back_t(g_t))
    return loss, grads_i, grads_t


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    wall_ms: float


class _Momentum:
    """Classic momentum buffers over the four trainable arrays of a params pair."""

    def __init__(self, params: AdapterParams, lr: float, mu: float):
        self.lr = lr
        self.mu = mu
        self.v = [np.zeros_like(a) for a in (params.w1, params.b1, params.w2, params.b2)]

    def step(self, params: AdapterParams, grads: AdapterParams) -> None:
        arrays = (params.w1, params.b1, params.w2, params.b2)
        gs = (grads.w1, grads.b1, grads.w2, grads.b2)
        for buf, arr, g in zip(self.v, arrays, gs):
            buf *= self.mu
            buf -= self.lr * g
            arr += buf


def fit_adapters(
    table: EmbeddingTable,
    bank: ClassTextBank,
    cfg: AdaptConfig,
) -> tuple[AdapterParams, AdapterParams, list[EpochStats]]:
    """Mini-batch gradient descent on the contrastive loss, fixed shuffle order.

    Deterministic for a fixed seed: init, shuffles and reductions all run
    single-threaded off one PCG64 stream.
    """
    cfg.validate()
    if table.dim != bank.dim:
        raise DimensionMismatch(f"table dim {table.dim} != bank dim {bank.dim}")
    rng = np.random.default_rng(cfg.seed)
    params_i = init_params(table.dim, cfg.blend, rng)
    params_t = init_params(table.dim, cfg.blend, rng)
    opt_i = _Momentum(params_i, cfg.learning_rate, cfg.momentum)
    opt_t = _Momentum(params_t, cfg.learning_rate, cfg.momentum)

    log: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        order = rng.permutation(table.n)
        total, seen = 0.0, 0
        for lo in range(0, table.n, cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            batch = table.slice(idx)
            try:
                loss, g_i, g_t = infonce_loss(
                    params_i, params_t, batch, bank, cfg.temperature
                )
            except NonFiniteLoss as e:
                raise NonFiniteLoss(
                    f"epoch {epoch}, batch at offset {lo}: {e}"
                ) from e
            opt_i.step(params_i, g_i)
            opt_t.step(params_t, g_t)
            total += loss * len(idx)
            seen += len(idx)
        wall_ms = (time.perf_counter() - start) * 1000.0
        log.append(EpochStats(epoch=epoch, mean_loss=total / seen, wall_ms=wall_ms))
    return params_i, params_t, log


def _pack_array(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f8").tobytes()


def save_adapters(params_i: AdapterParams, params_t: AdapterParams, path) -> None:
    """Write both adapters as a versioned ADP1 checkpoint."""
    params_i.validate()
    params_t.validate()
    if params_i.dim != params_t.dim:
        raise DimensionMismatch("image/text adapters must share a dim")
    parts = [
        ADP_MAGIC,
        struct.pack("<I", ADP_VERSION),
        struct.pack("<I", params_i.dim),
        struct.pack("<d", params_i.blend),
        struct.pack("<d", params_t.blend),
    ]
    for p in (params_i, params_t):
        for arr in (p.w1, p.b1, p.w2, p.b2):
            parts.append(_pack_array(arr))
    with open(path, "wb") as f:
        f.write(b"".join(parts))


def load_adapters(path) -> tuple[AdapterParams, AdapterParams]:
    """Exact round-trip of save_adapters."""
    with open(path, "rb") as f:
        data = f.read()

    pos = 0

    def take(count: int) -> bytes:
        nonlocal pos
        if pos + count > len(data):
            raise TruncatedFile(pos, count, len(data) - pos)
        out = data[pos : pos + count]
        pos += count
        return out

    magic = take(4)
    if magic != ADP_MAGIC:
        raise MagicMismatch(ADP_MAGIC, magic)
    version = struct.unpack("<I", take(4))[0]
    if version != ADP_VERSION:
        raise VersionUnsupported(version)
    dim = struct.unpack("<I", take(4))[0]
    blend_i = struct.unpack("<d", take(8))[0]
    blend_t = struct.unpack("<d", take(8))[0]

    def matrix(rows: int, cols: int) -> np.ndarray:
        raw = take(rows * cols * 8)
        arr = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        return arr.reshape(rows, cols) if cols > 1 else arr

    out = []
    for blend in (blend_i, blend_t):
        w1 = matrix(dim, dim)
        b1 = matrix(dim, 1)
        w2 = matrix(dim, dim)
        b2 = matrix(dim, 1)
        out.append(AdapterParams(w1=w1, b1=b1, w2=w2, b2=b2, blend=blend))
    return out[0], out[1]
