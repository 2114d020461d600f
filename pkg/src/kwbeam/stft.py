"""
Hann-windowed STFT / overlap-add ISTFT at 16 kHz, 32 ms frames, 16 ms shift.

The FFT is an iterative radix-2 transform vectorised over frames; only
power-of-two frame lengths are supported.
"""

import struct
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ValidationError

__all__ = [
    "StftConfig", "Spectrogram", "fft", "ifft", "rfft", "irfft",
    "hann", "stft", "istft", "stft_multichannel", "magnitude",
    "save_spectrogram", "load_spectrogram",
]


@dataclass(frozen=True)
class StftConfig:
    frame_len: int = 512
    frame_shift: int = 256
    sample_rate: int = 16000

    def __post_init__(self):
        n = self.frame_len
        if n < 2 or n & (n - 1):
            raise ValidationError(f"frame_len must be a power of two, got {n}")
        if self.frame_shift * 2 != n:
            raise ValidationError(
                f"frame_shift must be frame_len/2 = {n // 2}, "
                f"got {self.frame_shift}")

    @property
    def fft_bins(self):
        return self.frame_len // 2 + 1

    def num_frames(self, num_samples):
        if num_samples < self.frame_len:
            return 0
        return 1 + (num_samples - self.frame_len) // self.frame_shift


@dataclass
class Spectrogram:
    data: np.ndarray
    config: StftConfig = StftConfig()

    @property
    def num_frames(self):
        return self.data.shape[0]

    @property
    def num_bins(self):
        return self.data.shape[1]


_BITREV = {}


def _bit_reverse(n):
    if n not in _BITREV:
        bits = n.bit_length() - 1
        idx = np.arange(n)
        rev = np.zeros(n, dtype=np.int64)
        for b in range(bits):
            rev |= ((idx >> b) & 1) << (bits - 1 - b)
        _BITREV[n] = rev
    return _BITREV[n]


def fft(x):
    """Radix-2 decimation-in-time FFT along the last axis."""
    x = np.asarray(x, dtype=np.complex128)
    n = x.shape[-1]
    if n < 1 or n & (n - 1):
        raise ValidationError(f"FFT length must be a power of two, got {n}")
    out = x[..., _bit_reverse(n)]
    lead = out.shape[:-1]
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(lead + (n // size, size))
        even = blocks[..., :half]
        odd = blocks[..., half:] * twiddle
        blocks = np.concatenate([even + odd, even - odd], axis=-1)
        out = blocks.reshape(lead + (n,))
        size *= 2
    return out


def ifft(x):
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def rfft(x):
    x = np.asarray(x, dtype=np.float64)
    return fft(x)[..., : x.shape[-1] // 2 + 1]


def irfft(spec, n):
    """Inverse of rfft for even n; the imaginary parts of bins 0 and n/2 are
    ignored, as for any real signal."""
    spec = np.asarray(spec, dtype=np.complex128)
    if spec.shape[-1] != n // 2 + 1:
        raise ValidationError(
            f"expected {n // 2 + 1} bins for length {n}, got {spec.shape[-1]}")
    full = np.concatenate([spec, np.conj(spec[..., n // 2 - 1:0:-1])],
                          axis=-1)
    full[..., 0] = full[..., 0].real
    full[..., n // 2] = full[..., n // 2].real
    return ifft(full).real


def hann(n):
    """Periodic Hann window; at 50% overlap it sums to exactly 1."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def _frames(x, cfg):
    num = cfg.num_frames(x.shape[-1])
    if num == 0:
        raise ValidationError(
            f"signal of {x.shape[-1]} samples shorter than one frame "
            f"({cfg.frame_len})")
    idx = (np.arange(num)[:, None] * cfg.frame_shift
           + np.arange(cfg.frame_len)[None, :])
    return x[..., idx]


def stft(x, cfg=StftConfig()):
    """
    Arguments:
        x: 1-D real signal, len >= cfg.frame_len
    Return:
        Spectrogram with data T x F complex, F = frame_len/2 + 1
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValidationError("stft expects a single channel")
    return Spectrogram(rfft(_frames(x, cfg) * hann(cfg.frame_len)), cfg)


def stft_multichannel(samples, cfg=StftConfig()):
    """(C, n) real samples -> (C, T, F) complex coefficients."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValidationError("expected (channels, samples) array")
    return rfft(_frames(samples, cfg) * hann(cfg.frame_len))


def istft(spec, cfg=StftConfig()):
    """
    Overlap-add synthesis without a synthesis window. Output has
    (T - 1) * shift + frame_len samples; everything except the first and
    last frame_len samples reconstructs the analysed signal exactly.
    """
    if isinstance(spec, Spectrogram):
        if spec.config != cfg:
            raise ValidationError(
                f"spectrogram made with {spec.config}, istft called with {cfg}")
        data = spec.data
    else:
        data = np.asarray(spec)
    if data.ndim != 2 or data.shape[1] != cfg.fft_bins:
        raise ValidationError(
            f"expected T x {cfg.fft_bins} spectrogram, got {data.shape}")
    frames = irfft(data, cfg.frame_len)
    num = data.shape[0]
    out = np.zeros((num - 1) * cfg.frame_shift + cfg.frame_len)
    for t in range(num):
        start = t * cfg.frame_shift
        out[start:start + cfg.frame_len] += frames[t]
    win = hann(cfg.frame_len)
    gain = win[: cfg.frame_shift] + win[cfg.frame_shift:]
    return out / gain.mean()


def magnitude(spec):
    data = spec.data if isinstance(spec, Spectrogram) else spec
    return np.abs(data)


_SPEC_MAGIC = b"KWSPEC1"


def save_spectrogram(spec, path):
    data = spec.data if isinstance(spec, Spectrogram) else np.asarray(spec)
    t, f = data.shape
    pairs = np.empty((t, f, 2), dtype="<f4")
    pairs[..., 0] = data.real
    pairs[..., 1] = data.imag
    with open(path, "wb") as fp:
        fp.write(_SPEC_MAGIC + struct.pack("<II", t, f) + pairs.tobytes())


def load_spectrogram(path):
    raw = open(path, "rb").read()
    head = len(_SPEC_MAGIC) + 8
    if raw[:len(_SPEC_MAGIC)] != _SPEC_MAGIC:
        raise FormatError(f"{path}: bad spectrogram magic")
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header")
    t, f = struct.unpack("<II", raw[len(_SPEC_MAGIC):head])
    if len(raw) != head + t * f * 8:
        raise FormatError(f"{path}: expected {t}x{f} values, size mismatch")
    pairs = np.frombuffer(raw, dtype="<f4", offset=head).reshape(t, f, 2)
    return pairs[..., 0].astype(np.complex128) + 1j * pairs[..., 1]
