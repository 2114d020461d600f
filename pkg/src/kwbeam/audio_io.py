"""
Multichannel 16-bit PCM WAV I/O, keyword-region annotations and manifests.

Samples are held as float64 arrays shaped (channels, num_samples), scaled to
[-1, 1) by 1/32768. Channel 0 (channel 1 in file order) is the reference
channel for the whole pipeline.
"""

import json
import math
import wave
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, ValidationError

SAMPLE_RATE = 16000
MAX_CHANNELS = 8

__all__ = [
    "AudioBuffer", "KeywordRegion", "ManifestEntry", "SAMPLE_RATE",
    "read_wav", "write_wav", "require_sample_rate", "region_to_frames",
    "read_annotations", "write_annotations", "lookup_region",
    "read_manifest", "write_manifest",
]


@dataclass
class AudioBuffer:
    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim == 1:
            samples = samples[None, :]
        if samples.ndim != 2 or samples.shape[0] < 1:
            raise ValidationError(
                f"samples must be (channels, n), got shape {samples.shape}")
        if int(self.sample_rate_hz) <= 0:
            raise ValidationError(
                f"sample rate must be positive, got {self.sample_rate_hz}")
        self.samples = samples
        self.sample_rate_hz = int(self.sample_rate_hz)

    @property
    def channels(self):
        return self.samples.shape[0]

    @property
    def num_samples(self):
        return self.samples.shape[1]

    @property
    def duration_s(self):
        return self.num_samples / self.sample_rate_hz


@dataclass(frozen=True)
class KeywordRegion:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (math.isfinite(self.start_s) and math.isfinite(self.end_s)):
            raise ValidationError("keyword region bounds must be finite")
        if self.start_s < 0:
            raise ValidationError(f"region start {self.start_s} < 0")
        if self.end_s <= self.start_s:
            raise ValidationError(
                f"region end {self.end_s} must exceed start {self.start_s}")

    def check_within(self, duration_s):
        # one sample of slack for rounding in annotation files
        if self.end_s > duration_s + 1.0 / SAMPLE_RATE:
            raise ValidationError(
                f"region end {self.end_s:.4f}s beyond audio duration "
                f"{duration_s:.4f}s")


def read_wav(path):
    """
    Read a 16-bit PCM WAV file with 1..8 channels.

    The sample rate is returned as found; pipeline entry points call
    require_sample_rate() to reject anything but 16 kHz.
    """
    try:
        with wave.open(str(path), "rb") as wf:
            channels = wf.getnchannels()
            width = wf.getsampwidth()
            rate = wf.getframerate()
            frames = wf.readframes(wf.getnframes())
    except (wave.Error, EOFError) as exc:
        raise FormatError(f"{path}: malformed or unsupported WAV ({exc})")
    if width != 2:
        raise FormatError(
            f"{path}: only 16-bit PCM supported, got {8 * width}-bit")
    if not 1 <= channels <= MAX_CHANNELS:
        raise FormatError(f"{path}: {channels} channels (1-8 supported)")
    data = np.frombuffer(frames, dtype="<i2")
    usable = (data.size // channels) * channels
    data = data[:usable].reshape(-1, channels).T
    return AudioBuffer(data.astype(np.float64) / 32768.0, rate)


def quantize(samples):
    """Saturating float -> int16 conversion used by write_wav."""
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise ValidationError("cannot quantize non-finite samples")
    return np.clip(np.round(samples * 32768.0), -32768, 32767).astype("<i2")


def write_wav(buf, path):
    pcm = quantize(buf.samples)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(buf.channels)
        wf.setsampwidth(2)
        wf.setframerate(buf.sample_rate_hz)
        wf.writeframes(np.ascontiguousarray(pcm.T).tobytes())


def require_sample_rate(buf, rate=SAMPLE_RATE):
    if buf.sample_rate_hz != rate:
        raise ValidationError(
            f"expected {rate} Hz audio, got {buf.sample_rate_hz} Hz")
    return buf


def region_to_frames(region, frame_len, frame_shift, total_frames,
                     sample_rate=SAMPLE_RATE):
    """
    Frame indices whose centre time lies in [start_s, end_s).

    Arguments:
        region: KeywordRegion
        frame_len, frame_shift: STFT framing in samples
        total_frames: number of frames in the spectrogram
    Return:
        sorted int array of frame indices (never empty)
    """
    if frame_shift <= 0:
        raise ValidationError("frame_shift must be positive")
    tau = np.arange(int(total_frames))
    centers = (tau * frame_shift + frame_len / 2.0) / sample_rate
    frames = tau[(centers >= region.start_s) & (centers < region.end_s)]
    if frames.size == 0:
        raise ValidationError(
            f"keyword region [{region.start_s}, {region.end_s}) s covers no "
            "frame centre")
    return frames


def read_annotations(path):
    """Parse `<wav-path>\\t<start_s>\\t<end_s>` lines into (path, region) pairs.

    Relative wav paths are resolved against the annotation file's directory.
    """
    path = Path(path)
    entries = []
    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, 1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated "
                                  f"fields, got {len(parts)}")
            try:
                region = KeywordRegion(float(parts[1]), float(parts[2]))
            except ValueError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}")
            wav = Path(parts[0])
            if not wav.is_absolute():
                wav = path.parent / wav
            entries.append((wav, region))
    return entries


def write_annotations(entries, path):
    with open(path, "w", encoding="utf-8") as fp:
        for wav, region in entries:
            fp.write(f"{wav}\t{region.start_s:.6f}\t{region.end_s:.6f}\n")


def lookup_region(entries, wav_path):
    target = Path(wav_path).resolve()
    for wav, region in entries:
        if Path(wav).resolve() == target:
            return region
    raise ValidationError(f"no keyword region annotated for {wav_path}")


@dataclass
class ManifestEntry:
    """
    One manifest line. kind is "keyword", "background" or "mixture";
    mixtures carry their keyword region and optional clean references.
    """
    kind: str
    path: Path
    speaker: str = None
    region: KeywordRegion = None
    target: Path = None
    interference: Path = None
    extra: dict = field(default_factory=dict)


_KINDS = ("keyword", "background", "mixture")


def read_manifest(path, check_paths=True):
    path = Path(path)
    base = path.parent
    entries = []

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() else base / p

    with open(path, encoding="utf-8") as fp:
        for lineno, line in enumerate(fp, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"{path}:{lineno}: {exc}")
            kind = obj.pop("kind", None)
            if kind not in _KINDS:
                raise FormatError(f"{path}:{lineno}: bad kind {kind!r}")
            if "path" not in obj:
                raise FormatError(f"{path}:{lineno}: missing 'path'")
            entry = ManifestEntry(kind, resolve(obj.pop("path")),
                                  speaker=obj.pop("speaker", None))
            if "start_s" in obj or "end_s" in obj:
                entry.region = KeywordRegion(float(obj.pop("start_s")),
                                             float(obj.pop("end_s")))
            for ref in ("target", "interference"):
                if obj.get(ref) is not None:
                    setattr(entry, ref, resolve(obj.pop(ref)))
            entry.extra = obj
            if check_paths:
                for p in (entry.path, entry.target, entry.interference):
                    if p is not None and not p.exists():
                        raise ValidationError(
                            f"{path}:{lineno}: missing file {p}")
            entries.append(entry)
    return entries


def write_manifest(entries, path):
    base = Path(path).parent

    def rel(p):
        p = Path(p)
        try:
            return str(p.relative_to(base))
        except ValueError:
            return str(p)

    with open(path, "w", encoding="utf-8") as fp:
        for e in entries:
            obj = {"kind": e.kind, "path": rel(e.path)}
            if e.speaker is not None:
                obj["speaker"] = e.speaker
            if e.region is not None:
                obj["start_s"] = e.region.start_s
                obj["end_s"] = e.region.end_s
            if e.target is not None:
                obj["target"] = rel(e.target)
            if e.interference is not None:
                obj["interference"] = rel(e.interference)
            obj.update(e.extra)
            fp.write(json.dumps(obj, sort_keys=True) + "\n")
