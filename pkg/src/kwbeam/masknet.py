"""
Frame-wise MLP that maps spliced, normalised magnitude features to a
keyword mask and a non-keyword mask (sigmoid outputs, keyword half first).

Weights are stored as (fan_in, fan_out) matrices, so a layer computes
``x @ W + b``. Everything runs in float64.
"""

import hashlib
import logging
import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, NumericError, ValidationError
from .features import (FeatureConfig, NormStats, identity_stats, normalize,
                       pack_stats, splice, unpack_stats)

logger = logging.getLogger(__name__)

DEFAULT_DIMS = (5376, 1024, 1024, 1024, 512)

__all__ = [
    "DEFAULT_DIMS", "MaskNetModel", "MaskPair", "IbmPair", "TrainConfig",
    "init_model", "forward", "network_forward", "compute_ibm",
    "bce_loss", "loss_and_gradients", "train", "save_model", "load_model",
    "model_checksum",
]


@dataclass
class MaskNetModel:
    weights: list
    biases: list
    norm_stats: NormStats
    seed: int = 0

    @property
    def dims(self):
        return (self.weights[0].shape[0],) + tuple(
            w.shape[1] for w in self.weights)

    @property
    def mask_dim(self):
        return self.dims[-1] // 2

    def copy(self):
        return MaskNetModel([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases],
                            NormStats(self.norm_stats.mean.copy(),
                                      self.norm_stats.std.copy(),
                                      self.norm_stats.count),
                            self.seed)


@dataclass
class MaskPair:
    keyword: np.ndarray
    non_keyword: np.ndarray


@dataclass
class IbmPair:
    keyword: np.ndarray
    non_keyword: np.ndarray

    def targets(self):
        return np.concatenate([self.keyword, self.non_keyword], axis=1)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 128
    lr: float = 0.01
    epochs: int = 50
    dropout_input: float = 0.2
    dropout_hidden: float = 0.5
    seed: int = 17
    # plain SGD unless changed
    momentum: float = 0.0
    lr_decay: float = 1.0

    def __post_init__(self):
        for name in ("dropout_input", "dropout_hidden", "momentum"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValidationError(f"{name} must be in [0, 1), got {value}")
        if self.lr <= 0:
            raise ValidationError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValidationError("batch_size and epochs must be >= 1")


def _check_dims(dims):
    dims = tuple(int(d) for d in dims)
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValidationError(f"invalid layer dims {dims}")
    if dims[-1] % 2:
        raise ValidationError(
            f"output width {dims[-1]} must hold two equal-size masks")
    return dims


def init_model(dims=DEFAULT_DIMS, seed=0, norm_stats=None):
    """Glorot-uniform weights from a seeded PCG64 stream, zero biases."""
    dims = _check_dims(dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    if norm_stats is None:
        norm_stats = identity_stats(dims[0])
    if norm_stats.dim != dims[0]:
        raise ValidationError(
            f"norm stats dim {norm_stats.dim} != input dim {dims[0]}")
    return MaskNetModel(weights, biases, norm_stats, int(seed))


def _sigmoid(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def network_forward(model, x):
    """Affine/ReLU stack + sigmoid on already-normalised features (N x D)."""
    h = np.asarray(x, dtype=np.float64)
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        z = h @ w + b
        h = _sigmoid(z) if i == last else np.maximum(z, 0.0)
    if not np.all(np.isfinite(h)):
        raise NumericError("non-finite activations; model may be corrupt")
    return h


def forward(model, mag, feature_cfg=FeatureConfig()):
    """
    Arguments:
        mag: T x F magnitude spectrogram of one channel (F >= base_dim)
    Return:
        MaskPair of T x base_dim masks in (0, 1)
    """
    if model.dims[0] != feature_cfg.spliced_dim:
        raise ValidationError(
            f"model input {model.dims[0]} != spliced dim "
            f"{feature_cfg.spliced_dim}")
    feats = normalize(splice(mag, feature_cfg), model.norm_stats)
    out = network_forward(model, feats)
    half = model.mask_dim
    return MaskPair(out[:, :half], out[:, half:])


def compute_ibm(keyword_mag, background_mag, base_dim=256, margin_db=0.0):
    """keyword = 1 where |X_k| > |X_n| * 10^(margin/20); ties go to background."""
    keyword_mag = np.asarray(keyword_mag)
    background_mag = np.asarray(background_mag)
    if keyword_mag.shape != background_mag.shape:
        raise ValidationError(
            f"IBM inputs differ in shape: {keyword_mag.shape} vs "
            f"{background_mag.shape}")
    if keyword_mag.ndim != 2 or keyword_mag.shape[1] < base_dim:
        raise ValidationError(f"need T x >={base_dim} magnitudes")
    kw = np.abs(keyword_mag[:, :base_dim])
    bg = np.abs(background_mag[:, :base_dim])
    keyword = (kw > bg * 10.0 ** (margin_db / 20.0)).astype(np.float64)
    return IbmPair(keyword, 1.0 - keyword)


def bce_loss(logits, targets):
    """Binary cross-entropy from logits, summed over outputs, mean over rows."""
    z = logits
    per = np.maximum(z, 0.0) - targets * z + np.log1p(np.exp(-np.abs(z)))
    return per.sum() / z.shape[0]


def loss_and_gradients(model, x, targets, rng=None, dropout_input=0.0,
                       dropout_hidden=0.0):
    """
    One forward/backward pass on a batch of normalised features.

    Dropout is inverted (kept units scaled by 1/(1-p)) and only applied when
    ``rng`` is given.
    Return:
        loss, list of weight grads, list of bias grads
    """
    n = x.shape[0]
    n_layers = len(model.weights)
    inputs, keeps, pre = [], [], []
    h = x
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        p = dropout_input if i == 0 else dropout_hidden
        if rng is not None and p > 0:
            keep = (rng.random(h.shape) >= p) / (1.0 - p)
            h = h * keep
        else:
            keep = None
        inputs.append(h)
        keeps.append(keep)
        z = h @ w + b
        pre.append(z)
        if i < n_layers - 1:
            h = np.maximum(z, 0.0)

    logits = pre[-1]
    loss = bce_loss(logits, targets)
    delta = (_sigmoid(logits) - targets) / n

    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for i in range(n_layers - 1, -1, -1):
        grad_w[i] = inputs[i].T @ delta
        grad_b[i] = delta.sum(axis=0)
        if i == 0:
            break
        delta = delta @ model.weights[i].T
        if keeps[i] is not None:
            delta = delta * keeps[i]
        delta = delta * (pre[i - 1] > 0)
    return loss, grad_w, grad_b


class _FramePool:
    """All training frames of all utterances, spliced lazily per batch."""

    def __init__(self, dataset, feature_cfg):
        cfg = feature_cfg
        padded, positions, targets = [], [], []
        offset = 0
        for i, (mag, ibm) in enumerate(dataset):
            mag = np.asarray(mag, dtype=np.float64)
            tgt = ibm.targets() if isinstance(ibm, IbmPair) else np.asarray(ibm)
            if mag.ndim != 2 or mag.shape[1] < cfg.base_dim:
                raise ValidationError(f"utterance {i}: bad magnitude shape "
                                      f"{mag.shape}")
            if tgt.shape != (mag.shape[0], 2 * cfg.base_dim):
                raise ValidationError(
                    f"utterance {i}: targets {tgt.shape} do not match "
                    f"{mag.shape[0]} frames x {2 * cfg.base_dim}")
            base = np.pad(mag[:, : cfg.base_dim],
                          ((cfg.left_context, cfg.right_context), (0, 0)),
                          mode="edge")
            padded.append(base)
            positions.append(offset + cfg.left_context
                             + np.arange(mag.shape[0]))
            targets.append(tgt)
            offset += base.shape[0]
        if not padded:
            raise ValidationError("empty training set")
        self.cfg = cfg
        self.frames = np.concatenate(padded)
        self.positions = np.concatenate(positions)
        self.targets = np.concatenate(targets).astype(np.float64)
        self._offsets = np.arange(-cfg.left_context, cfg.right_context + 1)

    def __len__(self):
        return self.positions.size

    def batch(self, rows):
        pos = self.positions[rows]
        feats = self.frames[pos[:, None] + self._offsets[None, :]]
        return feats.reshape(len(rows), self.cfg.spliced_dim), self.targets[rows]


def train(model, dataset, cfg=TrainConfig(), feature_cfg=FeatureConfig(),
          on_epoch=None):
    """
    Mini-batch SGD on pooled frames, shuffled every epoch.

    Arguments:
        model: initial MaskNetModel carrying the normalisation stats to use
        dataset: iterable of (T x F mixture magnitudes, IbmPair)
        on_epoch: optional callback(epoch, mean_loss)
    Return:
        (trained copy of model, list of per-epoch mean losses)
    """
    if model.dims[0] != feature_cfg.spliced_dim:
        raise ValidationError(
            f"model input {model.dims[0]} != spliced dim "
            f"{feature_cfg.spliced_dim}")
    if model.dims[-1] != 2 * feature_cfg.base_dim:
        raise ValidationError(
            f"model output {model.dims[-1]} != 2 x {feature_cfg.base_dim}")
    pool = _FramePool(dataset, feature_cfg)
    model = model.copy()
    rng = np.random.default_rng(cfg.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    lr = cfg.lr
    losses = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(pool))
        total = 0.0
        for k, start in enumerate(range(0, len(order), cfg.batch_size)):
            rows = order[start:start + cfg.batch_size]
            feats, targets = pool.batch(rows)
            x = normalize(feats, model.norm_stats)
            loss, gw, gb = loss_and_gradients(
                model, x, targets, rng=rng,
                dropout_input=cfg.dropout_input,
                dropout_hidden=cfg.dropout_hidden)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch + 1}, batch {k}",
                    {"epoch": epoch + 1, "batch": k,
                     "rows": rows.tolist()[:16],
                     "feature_max": float(np.max(np.abs(x)))})
            for i in range(len(model.weights)):
                vel_w[i] = cfg.momentum * vel_w[i] - lr * gw[i]
                vel_b[i] = cfg.momentum * vel_b[i] - lr * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
            total += loss * len(rows)
        mean_loss = total / len(pool)
        losses.append(mean_loss)
        logger.info("epoch %d/%d  loss %.5f", epoch + 1, cfg.epochs, mean_loss)
        if on_epoch is not None:
            on_epoch(epoch + 1, mean_loss)
        lr *= cfg.lr_decay
    return model, losses


_NET_MAGIC = b"KWNET1\0"


def _pack_model(model):
    parts = [_NET_MAGIC, struct.pack("<I", len(model.weights))]
    for w, b in zip(model.weights, model.biases):
        parts.append(struct.pack("<II", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f8").tobytes())
        parts.append(np.asarray(b, dtype="<f8").tobytes())
    parts.append(pack_stats(model.norm_stats))
    parts.append(struct.pack("<Q", model.seed))
    return b"".join(parts)


def model_checksum(model):
    return hashlib.sha256(_pack_model(model)).hexdigest()


def save_model(model, path):
    with open(path, "wb") as fp:
        fp.write(_pack_model(model))


def load_model(path, expected_dims=DEFAULT_DIMS):
    """
    Load a KWNET1 file. With ``expected_dims`` set (the default is the
    full-size architecture) any other layer layout is rejected; pass None
    to accept any self-consistent network.
    """
    raw = open(path, "rb").read()
    if raw[: len(_NET_MAGIC)] != _NET_MAGIC:
        raise FormatError(f"{path}: not a KWNET1 model file")

    def take(fmt, off):
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise FormatError(f"{path}: truncated model file")
        return struct.unpack_from(fmt, raw, off), off + size

    (n_layers,), off = take("<I", len(_NET_MAGIC))
    weights, biases = [], []
    for _ in range(n_layers):
        (rows, cols), off = take("<II", off)
        need = 8 * (rows * cols + cols)
        if off + need > len(raw):
            raise FormatError(f"{path}: truncated model file")
        w = np.frombuffer(raw, "<f8", rows * cols, off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(raw, "<f8", cols, off)
        off += 8 * cols
        weights.append(w.astype(np.float64))
        biases.append(b.astype(np.float64))
    try:
        stats, off = unpack_stats(raw, off)
    except FormatError as exc:
        raise FormatError(f"{path}: {exc}")
    (seed,), off = take("<Q", off)
    if off != len(raw):
        raise FormatError(f"{path}: {len(raw) - off} trailing bytes")

    if not weights:
        raise ValidationError(f"{path}: model has no layers")
    for i in range(1, len(weights)):
        if weights[i].shape[0] != weights[i - 1].shape[1]:
            raise ValidationError(
                f"{path}: layer {i} input {weights[i].shape[0]} != previous "
                f"output {weights[i - 1].shape[1]}")
    model = MaskNetModel(weights, biases, stats, seed)
    _check_dims(model.dims)
    if expected_dims is not None and model.dims != tuple(expected_dims):
        raise ValidationError(
            f"{path}: layer dims {model.dims} != expected {tuple(expected_dims)}")
    if stats.dim != model.dims[0]:
        raise ValidationError(
            f"{path}: stats dim {stats.dim} != input dim {model.dims[0]}")
    if not all(np.all(np.isfinite(a)) for a in weights + biases):
        raise ValidationError(f"{path}: non-finite parameters")
    return model
