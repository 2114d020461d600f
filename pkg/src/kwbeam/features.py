"""
Context splicing and global mean/variance normalisation of magnitude frames.

Each frame keeps bins 0..base_dim-1 (the Nyquist bin is dropped) and is
concatenated with its left/right neighbours, leftmost first; missing
neighbours at utterance edges are replicated edge frames.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

STD_FLOOR = 1e-8

__all__ = [
    "FeatureConfig", "NormStats", "StatsAccumulator", "splice",
    "accumulate_stats", "normalize", "denormalize", "identity_stats",
    "save_stats", "load_stats", "pack_stats", "unpack_stats",
]


@dataclass(frozen=True)
class FeatureConfig:
    base_dim: int = 256
    left_context: int = 10
    right_context: int = 10

    @property
    def context_frames(self):
        return self.left_context + self.right_context + 1

    @property
    def spliced_dim(self):
        return self.base_dim * self.context_frames


@dataclass
class NormStats:
    mean: np.ndarray
    std: np.ndarray
    count: float

    @property
    def dim(self):
        return self.mean.shape[0]


def identity_stats(dim):
    return NormStats(np.zeros(dim), np.ones(dim), 0.0)


def splice(mag, cfg=FeatureConfig()):
    """
    Arguments:
        mag: T x F magnitudes, F >= cfg.base_dim
    Return:
        T x cfg.spliced_dim features
    """
    mag = np.asarray(mag, dtype=np.float64)
    if mag.ndim != 2 or mag.shape[0] < 1:
        raise ValidationError(f"expected T x F magnitudes, got {mag.shape}")
    if mag.shape[1] < cfg.base_dim:
        raise ValidationError(
            f"need at least {cfg.base_dim} bins, got {mag.shape[1]}")
    base = mag[:, : cfg.base_dim]
    padded = np.pad(base, ((cfg.left_context, cfg.right_context), (0, 0)),
                    mode="edge")
    # (T, base_dim, context) -> (T, context, base_dim)
    windows = np.lib.stride_tricks.sliding_window_view(
        padded, cfg.context_frames, axis=0)
    return np.ascontiguousarray(windows.transpose(0, 2, 1)).reshape(
        base.shape[0], cfg.spliced_dim)


class StatsAccumulator:
    """Streaming per-dimension mean/variance (Chan et al. pairwise merge).

    Partial accumulators built on disjoint chunks can be merged in any order.
    """

    def __init__(self, dim):
        self.dim = dim
        self.count = 0
        self.mean = np.zeros(dim)
        self.m2 = np.zeros(dim)

    def update(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.dim:
            raise ValidationError(
                f"expected N x {self.dim} features, got {features.shape}")
        if features.shape[0] == 0:
            return self
        other = StatsAccumulator(self.dim)
        other.count = features.shape[0]
        other.mean = features.mean(axis=0)
        other.m2 = ((features - other.mean) ** 2).sum(axis=0)
        return self.merge(other)

    def merge(self, other):
        if other.count == 0:
            return self
        n = self.count + other.count
        delta = other.mean - self.mean
        self.mean = self.mean + delta * (other.count / n)
        self.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / n)
        self.count = n
        return self

    def finalize(self):
        if self.count < 2:
            raise ValidationError(
                f"need at least 2 frames for statistics, got {self.count}")
        std = np.sqrt(self.m2 / self.count)
        return NormStats(self.mean.copy(), np.maximum(std, STD_FLOOR),
                         float(self.count))


def accumulate_stats(feature_mats):
    """Population mean/std over every frame of every matrix in the corpus."""
    acc = None
    for mat in feature_mats:
        mat = np.asarray(mat, dtype=np.float64)
        if acc is None:
            acc = StatsAccumulator(mat.shape[1])
        acc.update(mat)
    if acc is None:
        raise ValidationError("empty corpus")
    return acc.finalize()


def normalize(features, stats):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != stats.dim:
        raise ValidationError(
            f"feature dim {features.shape[-1]} != stats dim {stats.dim}")
    return (features - stats.mean) / stats.std


def denormalize(features, stats):
    features = np.asarray(features, dtype=np.float64)
    if features.shape[-1] != stats.dim:
        raise ValidationError(
            f"feature dim {features.shape[-1]} != stats dim {stats.dim}")
    return features * stats.std + stats.mean


_NORM_MAGIC = b"KWNORM1"


def pack_stats(stats):
    return (_NORM_MAGIC + struct.pack("<Id", stats.dim, stats.count)
            + np.asarray(stats.mean, dtype="<f8").tobytes()
            + np.asarray(stats.std, dtype="<f8").tobytes())


def unpack_stats(raw, offset=0):
    """Parse a KWNORM1 block starting at ``offset``; returns (stats, end)."""
    magic_end = offset + len(_NORM_MAGIC)
    if raw[offset:magic_end] != _NORM_MAGIC:
        raise FormatError("bad normalisation-stats magic")
    if len(raw) < magic_end + 12:
        raise FormatError("truncated normalisation-stats header")
    dim, count = struct.unpack_from("<Id", raw, magic_end)
    start = magic_end + 12
    end = start + 16 * dim
    if len(raw) < end:
        raise FormatError("truncated normalisation-stats body")
    mean = np.frombuffer(raw, dtype="<f8", count=dim, offset=start).copy()
    std = np.frombuffer(raw, dtype="<f8", count=dim,
                        offset=start + 8 * dim).copy()
    return NormStats(mean, std, count), end


def save_stats(stats, path):
    with open(path, "wb") as fp:
        fp.write(pack_stats(stats))


def load_stats(path):
    raw = open(path, "rb").read()
    stats, end = unpack_stats(raw)
    if end != len(raw):
        raise FormatError(f"{path}: trailing bytes after stats block")
    return stats
