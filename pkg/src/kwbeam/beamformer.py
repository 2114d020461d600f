"""
Mask-based MVDR beamformer estimated once over the keyword region.

Array conventions (C: channels, T: frames, F: bins):
    multichannel spectrogram Y: C x T x F complex
    masks: T x F real
    covariances: F x C x C
    steering vectors / filters: F x C
"""

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import FormatError, ValidationError
from .masknet import compute_ibm, forward
from .stft import magnitude

__all__ = [
    "BeamformerFilter", "median_mask", "extend_mask", "masked_covariance",
    "principal_eigenvector", "steering_from_covariance", "mvdr_filter",
    "apply_filter", "estimate_filter", "estimate_from_keyword",
    "oracle_masks", "save_filter", "load_filter",
]


@dataclass
class BeamformerFilter:
    weights: np.ndarray
    steering: np.ndarray
    degenerate_bins: list = field(default_factory=list)
    fallback_bins: list = field(default_factory=list)

    @property
    def channels(self):
        return self.weights.shape[1]

    @property
    def num_bins(self):
        return self.weights.shape[0]


def median_mask(per_channel_masks):
    """Element-wise median over channels (mean of middle pair for even C)."""
    masks = np.asarray(per_channel_masks, dtype=np.float64)
    if masks.ndim != 3 or masks.shape[0] < 1:
        raise ValidationError(f"expected C x T x F masks, got {masks.shape}")
    return np.median(masks, axis=0)


def extend_mask(mask, num_bins):
    """Pad a T x K mask to T x num_bins by repeating its last bin."""
    mask = np.asarray(mask, dtype=np.float64)
    missing = num_bins - mask.shape[1]
    if missing < 0:
        raise ValidationError(f"mask has {mask.shape[1]} > {num_bins} bins")
    if missing == 0:
        return mask
    return np.concatenate([mask, np.repeat(mask[:, -1:], missing, axis=1)],
                          axis=1)


def masked_covariance(Y, mask, frames):
    """
    R(f) = sum_{t in frames} (m[t,f] Y[:,t,f]) (m[t,f] Y[:,t,f])^H
    """
    Y = np.asarray(Y)
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValidationError("empty frame region")
    if frames.min() < 0 or frames.max() >= Y.shape[1]:
        raise ValidationError("frame region outside the spectrogram")
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != Y.shape[1:]:
        raise ValidationError(
            f"mask shape {mask.shape} != spectrogram T x F {Y.shape[1:]}")
    Z = mask[frames][None, :, :] * Y[:, frames, :]
    return np.einsum("ctf,dtf->fcd", Z, Z.conj())


def _canonical_phase(v):
    # rotate so the first component is real and non-negative
    first = v[..., :1]
    mag = np.abs(first)
    rot = np.where(mag > 0, np.conj(first) / np.where(mag > 0, mag, 1.0), 1.0)
    return v * rot


def principal_eigenvector(R, tol=1e-12, max_iter=10000, seed=0):
    """
    Batched power iteration on Hermitian PSD matrices.

    Arguments:
        R: F x C x C
    Return:
        v: F x C unit-norm, canonical phase
        eigval: F largest eigenvalues (Rayleigh quotients)
        degenerate: bool F-vector, True where R is the zero matrix
    """
    R = np.asarray(R, dtype=np.complex128)
    num_bins, c, _ = R.shape
    rng = np.random.default_rng(seed)
    start = np.ones(c) / np.sqrt(c) + 1e-3 * rng.standard_normal(c)
    start = start / np.linalg.norm(start)
    v = np.tile(start.astype(np.complex128), (num_bins, 1))

    scale = np.abs(np.trace(R, axis1=1, axis2=2))
    degenerate = scale == 0
    Rn = R / np.where(degenerate, 1.0, scale)[:, None, None]
    active = np.flatnonzero(~degenerate)
    for _ in range(max_iter):
        if active.size == 0:
            break
        w = np.einsum("fab,fb->fa", Rn[active], v[active])
        norm = np.linalg.norm(w, axis=1)
        dead = norm == 0
        # start vector orthogonal to a nonzero R: nudge it
        if np.any(dead):
            w[dead] = rng.standard_normal((dead.sum(), c))
            norm[dead] = np.linalg.norm(w[dead], axis=1)
        w = _canonical_phase(w / norm[:, None])
        change = np.linalg.norm(w - v[active], axis=1)
        v[active] = w
        active = active[change >= tol]
    eigval = np.real(np.einsum("fa,fab,fb->f", v.conj(), R, v))
    return _canonical_phase(v), eigval, degenerate


def steering_from_covariance(Rkk, tol=1e-12, max_iter=10000, seed=0):
    """Principal eigenvector per bin; returns (F x C steering, degenerate bins)."""
    v, _, degenerate = principal_eigenvector(Rkk, tol, max_iter, seed)
    return v, np.flatnonzero(degenerate).tolist()


def mvdr_filter(Rnn, v, delta=1e-6):
    """
    gamma = Rt^-1 v / (v^H Rt^-1 v),  Rt = Rnn + delta * trace(Rnn)/C * I

    Bins with a zero-trace Rnn fall back to v / (v^H v).
    Return:
        (F x C weights, list of fallback bins)
    """
    Rnn = np.asarray(Rnn, dtype=np.complex128)
    v = np.asarray(v, dtype=np.complex128)
    num_bins, c, _ = Rnn.shape
    if v.shape != (num_bins, c):
        raise ValidationError(f"steering shape {v.shape} != {(num_bins, c)}")
    trace = np.real(np.trace(Rnn, axis1=1, axis2=2))
    fallback = trace <= 0
    gamma = v / np.einsum("fc,fc->f", v.conj(), v)[:, None].real

    ok = np.flatnonzero(~fallback)
    if ok.size:
        loaded = Rnn[ok] + (delta * trace[ok] / c)[:, None, None] * np.eye(c)
        # enforce exact Hermitian symmetry before Cholesky
        loaded = 0.5 * (loaded + np.conj(np.swapaxes(loaded, 1, 2)))
        L = np.linalg.cholesky(loaded)
        y = np.linalg.solve(L, v[ok][..., None])
        x = np.linalg.solve(np.conj(np.swapaxes(L, 1, 2)), y)[..., 0]
        denom = np.einsum("fc,fc->f", v[ok].conj(), x)
        gamma[ok] = x / denom[:, None]
    return gamma, np.flatnonzero(fallback).tolist()


def apply_filter(gamma, Y):
    """x[t, f] = gamma(f)^H Y[:, t, f]."""
    weights = gamma.weights if isinstance(gamma, BeamformerFilter) else gamma
    Y = np.asarray(Y)
    if weights.shape != (Y.shape[2], Y.shape[0]):
        raise ValidationError(
            f"filter {weights.shape} does not match spectrogram C x T x F "
            f"{Y.shape}")
    return np.einsum("fc,ctf->tf", weights.conj(), Y)


def estimate_filter(Y, keyword_masks, non_keyword_masks, frames, delta=1e-6,
                    power_iter_tol=1e-12, seed=0):
    """
    MVDR filter from per-channel keyword / non-keyword masks.

    Arguments:
        Y: C x T x F spectrogram of the whole utterance
        keyword_masks, non_keyword_masks: C x len(frames) x K masks for the
            region frames (K <= F; missing high bins copy the last one)
        frames: keyword-region frame indices
    Return:
        BeamformerFilter, diagnostics dict
    """
    Y = np.asarray(Y)
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValidationError("empty keyword region")
    num_bins = Y.shape[2]
    full_k = np.zeros(Y.shape[1:])
    full_n = np.zeros(Y.shape[1:])
    full_k[frames] = extend_mask(median_mask(keyword_masks), num_bins)
    full_n[frames] = extend_mask(median_mask(non_keyword_masks), num_bins)

    Rnn = masked_covariance(Y, full_n, frames)
    Rkk = masked_covariance(Y, full_k, frames)
    v, degenerate = steering_from_covariance(Rkk, tol=power_iter_tol, seed=seed)
    gamma, fallback = mvdr_filter(Rnn, v, delta)
    diagnostics = {
        "region_frames": [int(frames[0]), int(frames[-1])],
        "num_region_frames": int(frames.size),
        "degenerate_bins": degenerate,
        "fallback_bins": fallback,
        "keyword_mask_mean": float(full_k[frames].mean()),
        "non_keyword_mask_mean": float(full_n[frames].mean()),
    }
    return BeamformerFilter(gamma, v, degenerate, fallback), diagnostics


def estimate_from_keyword(Y, model, frames, feature_cfg=None, **kwargs):
    """Run the mask net on each channel's keyword-region magnitudes, then
    estimate_filter()."""
    frames = np.asarray(frames, dtype=np.int64)
    if frames.size == 0:
        raise ValidationError("empty keyword region")
    fwd = {} if feature_cfg is None else {"feature_cfg": feature_cfg}
    kw, nk = [], []
    for ch in range(Y.shape[0]):
        pair = forward(model, magnitude(Y[ch, frames, :]), **fwd)
        kw.append(pair.keyword)
        nk.append(pair.non_keyword)
    return estimate_filter(Y, np.stack(kw), np.stack(nk), frames, **kwargs)


def oracle_masks(target_Y, interf_Y, frames, base_dim=256):
    """Per-channel IBMs over the region from the clean components."""
    kw, nk = [], []
    for ch in range(target_Y.shape[0]):
        ibm = compute_ibm(np.abs(target_Y[ch, frames]),
                          np.abs(interf_Y[ch, frames]), base_dim)
        kw.append(ibm.keyword)
        nk.append(ibm.non_keyword)
    return np.stack(kw), np.stack(nk)


_BF_MAGIC = b"KWBF1"


def save_filter(gamma, path, diagnostics=None):
    weights = np.asarray(gamma.weights, dtype="<c16")
    with open(path, "wb") as fp:
        fp.write(_BF_MAGIC + struct.pack("<II", weights.shape[1],
                                         weights.shape[0]))
        fp.write(weights.tobytes())
    if diagnostics is not None:
        with open(str(path) + ".json", "w") as fp:
            json.dump(diagnostics, fp, indent=2)


def load_filter(path):
    """Return the F x C complex weights stored in a KWBF1 file."""
    raw = open(path, "rb").read()
    head = len(_BF_MAGIC) + 8
    if raw[: len(_BF_MAGIC)] != _BF_MAGIC or len(raw) < head:
        raise FormatError(f"{path}: not a KWBF1 filter file")
    c, f = struct.unpack_from("<II", raw, len(_BF_MAGIC))
    if len(raw) != head + 16 * c * f:
        raise FormatError(f"{path}: size does not match {f} bins x {c} ch")
    return np.frombuffer(raw, "<c16", offset=head).reshape(f, c).copy()
