"""
Synthetic anechoic far-field scenes for training and evaluation.

Sources are plane waves hitting a small array; each channel is the source
delayed (fractionally, in the frequency domain) relative to microphone 1.
Speech is stood in for by two generators:

* keyword: a fixed three-syllable voiced pattern (harmonic complex through
  vowel formants) whose pitch, formant scale and timing vary per speaker;
* babble: formant-coloured noise bursts on a ~4 Hz syllabic envelope, used
  for background speech and for the target's command.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import (SAMPLE_RATE, AudioBuffer, KeywordRegion,
                       read_annotations, read_wav, write_annotations,
                       write_wav)
from .errors import ValidationError
from .masknet import compute_ibm
from .stft import StftConfig, magnitude, stft

SPEED_OF_SOUND = 343.0
TARGET_RMS = 0.05

__all__ = [
    "ArrayGeometry", "Scene", "SceneRender", "TrainingExample",
    "Speaker", "speaker_profile", "synth_keyword", "synth_babble",
    "synth_corpus", "steer", "mix_at_snr", "pairing_plan",
    "build_training_set", "build_eval_scene", "simu_set_specs",
    "render_scene_spec", "write_scene", "read_scene",
]


@dataclass
class ArrayGeometry:
    positions: np.ndarray = None
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        if self.positions is None:
            self.positions = [[0.05 * i, 0.0, 0.0] for i in range(4)]
        pos = np.asarray(self.positions, dtype=np.float64)
        if pos.ndim == 1:
            pos = np.stack([pos, np.zeros_like(pos), np.zeros_like(pos)], 1)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise ValidationError(f"mic positions must be C x 3, got {pos.shape}")
        for i in range(pos.shape[0]):
            for j in range(i):
                if np.allclose(pos[i], pos[j]):
                    raise ValidationError(f"mics {j} and {i} coincide")
        self.positions = pos

    @classmethod
    def linear(cls, channels=4, spacing=0.05):
        return cls([[spacing * i, 0.0, 0.0] for i in range(channels)])

    @property
    def channels(self):
        return self.positions.shape[0]

    def delays(self, azimuth_deg):
        """Arrival delay of each mic relative to mic 1, in seconds.

        Azimuth 0 is broadside (array normal, +y); positive angles lean
        towards +x.
        """
        theta = np.deg2rad(azimuth_deg)
        direction = np.array([np.sin(theta), np.cos(theta), 0.0])
        rel = self.positions - self.positions[0]
        return -(rel @ direction) / self.speed_of_sound

    def pad_samples(self, fs=SAMPLE_RATE):
        """Zero padding on each side that keeps fractional delays from
        wrapping around."""
        reach = np.max(np.linalg.norm(self.positions - self.positions[0],
                                      axis=1))
        return int(np.ceil(reach / self.speed_of_sound * fs)) + 1

    def to_dict(self):
        return {"positions": self.positions.tolist(),
                "speed_of_sound": self.speed_of_sound}


def steer(signal, geometry, azimuth_deg, distance_m=None, fs=SAMPLE_RATE):
    """
    Render a mono far-field source on every mic as a plane wave.

    The signal is zero-padded by geometry.pad_samples() on both sides (plus
    one sample when needed to make the length odd, so there is no Nyquist
    bin and the delay is a pure phase rotation). Unit gain on every channel;
    distance_m is kept for bookkeeping only.
    Return:
        C x (len + padding) array
    """
    del distance_m  # far-field, no attenuation
    signal = np.asarray(signal, dtype=np.float64)
    pad = geometry.pad_samples(fs)
    n = signal.size + 2 * pad
    tail = pad + (1 if n % 2 == 0 else 0)
    padded = np.concatenate([np.zeros(pad), signal, np.zeros(tail)])
    n = padded.size
    spec = np.fft.rfft(padded)
    freqs = np.fft.rfftfreq(n, 1.0 / fs)
    tau = geometry.delays(azimuth_deg)
    phase = np.exp(-2j * np.pi * freqs[None, :] * tau[:, None])
    return np.fft.irfft(spec[None, :] * phase, n, axis=1)


def _active_span(x):
    nz = np.flatnonzero(np.abs(x) > 0)
    if nz.size == 0:
        return None
    return nz[0], nz[-1] + 1


@dataclass
class SceneRender:
    mixture: AudioBuffer
    target: AudioBuffer
    interference: AudioBuffer
    keyword_region: KeywordRegion = None
    interference_scale: float = 1.0
    snr_db: float = None


def mix_at_snr(target, interference, snr_db, fs=SAMPLE_RATE):
    """
    Scale the interference by one scalar so that channel-1 target to
    interference power, over the span where both are active, equals snr_db.

    Arguments:
        target, interference: C x n arrays (shorter one is zero-padded)
    """
    if not np.isfinite(snr_db):
        raise ValidationError(f"snr_db must be finite, got {snr_db}")
    target = np.atleast_2d(np.asarray(target, dtype=np.float64))
    interference = np.atleast_2d(np.asarray(interference, dtype=np.float64))
    if target.shape[0] != interference.shape[0]:
        raise ValidationError("channel counts differ")
    n = max(target.shape[1], interference.shape[1])
    target = np.pad(target, ((0, 0), (0, n - target.shape[1])))
    interference = np.pad(interference, ((0, 0), (0, n - interference.shape[1])))

    span_t = _active_span(target[0])
    span_i = _active_span(interference[0])
    if span_t is None or span_i is None:
        raise ValidationError("zero-power source on reference channel")
    lo, hi = max(span_t[0], span_i[0]), min(span_t[1], span_i[1])
    if lo >= hi:
        raise ValidationError("target and interference do not overlap")
    p_t = np.mean(target[0, lo:hi] ** 2)
    p_i = np.mean(interference[0, lo:hi] ** 2)
    if p_t == 0 or p_i == 0:
        raise ValidationError("zero-power source over the overlap")
    scale = np.sqrt(p_t / (p_i * 10.0 ** (snr_db / 10.0)))
    interference = interference * scale
    return SceneRender(AudioBuffer(target + interference, fs),
                       AudioBuffer(target, fs), AudioBuffer(interference, fs),
                       interference_scale=float(scale), snr_db=float(snr_db))


# ---------------------------------------------------------------------------
# synthetic sources

@dataclass(frozen=True)
class Speaker:
    label: str
    f0: float
    formant_scale: float
    tilt: float
    rate: float


def speaker_profile(label):
    """Deterministic voice parameters derived from a speaker label."""
    digest = hashlib.sha256(str(label).encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    female = rng.random() < 0.5
    f0 = rng.uniform(180, 240) if female else rng.uniform(95, 140)
    scale = rng.uniform(1.02, 1.15) if female else rng.uniform(0.88, 1.0)
    return Speaker(str(label), f0, scale, rng.uniform(0.8, 1.6),
                   rng.uniform(0.9, 1.1))


# vowel formants (Hz) and relative gains for the keyword syllables
_KEYWORD_VOWELS = [
    ((500, 900, 2400), (1.0, 0.6, 0.15)),   # /o/
    ((300, 2300, 3000), (1.0, 0.35, 0.25)),  # /i/
    ((800, 1200, 2500), (1.0, 0.8, 0.2)),   # /a/
]
_KEYWORD_DURATIONS = (0.21, 0.23, 0.26)
_KEYWORD_PITCH = ((1.15, 1.1), (1.05, 1.0), (0.95, 0.8))


def _envelope(freqs, formants, gains, scale, tilt, bandwidth=90.0):
    env = np.full_like(freqs, 0.01)
    for fc, g in zip(formants, gains):
        bw = bandwidth + 0.06 * fc
        env = env + g * np.exp(-0.5 * ((freqs - fc * scale) / bw) ** 2)
    return env * (1.0 + freqs / 1000.0) ** (-tilt)


def _syllable_window(n, fs, attack=0.02, release=0.05):
    win = np.ones(n)
    a = min(int(attack * fs), n // 2)
    r = min(int(release * fs), n // 2)
    if a:
        win[:a] = np.sin(0.5 * np.pi * np.arange(a) / a) ** 2
    if r:
        win[n - r:] = np.cos(0.5 * np.pi * np.arange(r) / r) ** 2
    return win


def _normalize_rms(x, rms=TARGET_RMS):
    power = np.sqrt(np.mean(x ** 2))
    return x if power == 0 else x * (rms / power)


def synth_keyword(rng, speaker, fs=SAMPLE_RATE):
    """Voiced three-syllable keyword, ~0.7 s."""
    if not isinstance(speaker, Speaker):
        speaker = speaker_profile(speaker)
    stretch = speaker.rate * rng.uniform(0.9, 1.1)
    pieces = []
    for (formants, gains), dur, (p0, p1) in zip(
            _KEYWORD_VOWELS, _KEYWORD_DURATIONS, _KEYWORD_PITCH):
        n = int(dur * stretch * fs)
        f0 = speaker.f0 * rng.uniform(0.95, 1.05) * np.linspace(p0, p1, n)
        phase = 2 * np.pi * np.cumsum(f0) / fs
        num_harm = int(7600 // f0.max())
        k = np.arange(1, num_harm + 1)[:, None]
        amps = _envelope(k * f0[None, :], formants, gains,
                         speaker.formant_scale, speaker.tilt)
        start = rng.uniform(0, 2 * np.pi, size=(num_harm, 1))
        voiced = np.sum(amps * np.sin(k * phase[None, :] + start), axis=0)
        voiced = voiced / (np.sqrt(np.mean(voiced ** 2)) + 1e-12)
        breath = 0.03 * rng.standard_normal(n)
        pieces.append((voiced + breath) * _syllable_window(n, fs))
    return _normalize_rms(np.concatenate(pieces))


def synth_babble(rng, speaker, duration_s, fs=SAMPLE_RATE):
    """Formant-coloured noise bursts at a syllabic (~4 Hz) rate."""
    if not isinstance(speaker, Speaker):
        speaker = speaker_profile(speaker)
    total = int(duration_s * fs)
    out = np.zeros(total)
    pos = 0
    while pos < total:
        n = int(fs * rng.uniform(0.18, 0.32) / speaker.rate)
        if rng.random() < 0.15:
            pos += n // 2  # short pause
            continue
        noise = rng.standard_normal(n)
        spec = np.fft.rfft(noise)
        freqs = np.fft.rfftfreq(n, 1.0 / fs)
        formants = (rng.uniform(300, 900), rng.uniform(900, 2400),
                    rng.uniform(2300, 3400))
        gains = (1.0, rng.uniform(0.3, 0.9), rng.uniform(0.1, 0.3))
        spec *= _envelope(freqs, formants, gains, speaker.formant_scale,
                          speaker.tilt, bandwidth=140.0)
        burst = np.fft.irfft(spec, n)
        burst *= np.hanning(n) * rng.uniform(0.4, 1.0) / (
            np.sqrt(np.mean(burst ** 2)) + 1e-12)
        end = min(total, pos + n)
        out[pos:end] += burst[: end - pos]
        pos += int(n * 0.8)
    return _normalize_rms(out)


def synth_corpus(num_keyword_speakers, keywords_per_speaker,
                 num_background_speakers, backgrounds_per_speaker, seed,
                 background_s=(1.0, 2.0), fs=SAMPLE_RATE):
    """
    Return:
        keywords, backgrounds: lists of (mono samples, speaker label)
    """
    keywords, backgrounds = [], []
    for s in range(num_keyword_speakers):
        label = f"K{s:02d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, 1, s]))
        for _ in range(keywords_per_speaker):
            keywords.append((synth_keyword(rng, label, fs), label))
    for s in range(num_background_speakers):
        label = f"B{s:02d}"
        rng = np.random.default_rng(np.random.SeedSequence([seed, 2, s]))
        for _ in range(backgrounds_per_speaker):
            dur = rng.uniform(*background_s)
            backgrounds.append((synth_babble(rng, label, dur, fs), label))
    return keywords, backgrounds


# ---------------------------------------------------------------------------
# training mixtures

@dataclass
class TrainingExample:
    mixture: np.ndarray
    ibm: object
    snr_db: float
    keyword_index: int
    background_index: int
    magnitude: np.ndarray = None


def pairing_plan(keyword_speakers, background_speakers, count, seed,
                 snr_mean=3.2, snr_std=3.4, max_tries=1000):
    """
    Draw (keyword index, background index, snr_db) triples. Pairs never
    share a speaker label when both labels are known.
    """
    if not keyword_speakers or not background_speakers:
        raise ValidationError("keyword and background sets must be non-empty")
    rng = np.random.default_rng(seed)
    plan = []
    for _ in range(count):
        k = int(rng.integers(len(keyword_speakers)))
        for _ in range(max_tries):
            b = int(rng.integers(len(background_speakers)))
            ks, bs = keyword_speakers[k], background_speakers[b]
            if ks is None or bs is None or ks != bs:
                break
        else:
            raise ValidationError(
                f"no background speaker differs from keyword speaker {ks}")
        plan.append((k, b, float(rng.normal(snr_mean, snr_std))))
    return plan


def build_training_set(keywords, backgrounds, count, snr_mean=3.2,
                       snr_std=3.4, seed=0, stft_cfg=StftConfig(),
                       base_dim=256):
    """
    Single-channel keyword + background mixtures with IBM targets.

    Both signals start at sample 0 and are truncated to the shorter one.
    Arguments:
        keywords, backgrounds: lists of (mono samples, speaker label or None)
    Return:
        list of TrainingExample (magnitude = mixture STFT magnitudes)
    """
    plan = pairing_plan([s for _, s in keywords], [s for _, s in backgrounds],
                        count, seed, snr_mean, snr_std)
    examples = []
    for k, b, snr in plan:
        kw = np.asarray(keywords[k][0], dtype=np.float64)
        bg = np.asarray(backgrounds[b][0], dtype=np.float64)
        n = min(kw.size, bg.size)
        render = mix_at_snr(kw[None, :n], bg[None, :n], snr,
                            stft_cfg.sample_rate)
        ibm = compute_ibm(magnitude(stft(render.target.samples[0], stft_cfg)),
                          magnitude(stft(render.interference.samples[0],
                                         stft_cfg)), base_dim)
        mix = render.mixture.samples[0]
        examples.append(TrainingExample(mix, ibm, snr, k, b,
                                        magnitude(stft(mix, stft_cfg))))
    return examples


# ---------------------------------------------------------------------------
# evaluation scenes

@dataclass
class Scene:
    keyword: np.ndarray
    command: np.ndarray
    interference: np.ndarray
    target_azimuth: float = 0.0
    interferer_azimuth: float = 45.0
    target_distance: float = 1.5
    interferer_distance: float = 1.5
    snr_db: float = 0.0
    gap_s: float = 0.2
    # when set, used as the interference scale instead of the SNR rule
    interference_gain: float = None

    def __post_init__(self):
        if abs(self.target_azimuth - self.interferer_azimuth) < 1.0:
            raise ValidationError("source azimuths must differ by >= 1 degree")
        if not np.isfinite(self.snr_db):
            raise ValidationError("snr_db must be finite")


def build_eval_scene(scene, geometry=None, fs=SAMPLE_RATE, peak=0.9):
    """
    Target = keyword, gap, command; the interferer plays (looped) across
    the whole scene. Components are rescaled jointly if the mixture would
    exceed ``peak``.
    """
    geometry = geometry or ArrayGeometry()
    keyword = np.asarray(scene.keyword, dtype=np.float64)
    gap = np.zeros(int(round(scene.gap_s * fs)))
    target = np.concatenate([keyword, gap,
                             np.asarray(scene.command, dtype=np.float64)])
    interf = np.resize(np.asarray(scene.interference, dtype=np.float64),
                       target.size)
    t_multi = steer(target, geometry, scene.target_azimuth,
                    scene.target_distance, fs)
    i_multi = steer(interf, geometry, scene.interferer_azimuth,
                    scene.interferer_distance, fs)
    if scene.interference_gain is not None:
        scale = float(scene.interference_gain)
        i_multi = i_multi * scale
        render = SceneRender(AudioBuffer(t_multi + i_multi, fs),
                             AudioBuffer(t_multi, fs), AudioBuffer(i_multi, fs),
                             interference_scale=scale)
    else:
        render = mix_at_snr(t_multi, i_multi, scene.snr_db, fs)
    top = np.max(np.abs(render.mixture.samples))
    if top > peak:
        g = peak / top
        render.mixture.samples *= g
        render.target.samples *= g
        render.interference.samples *= g
        render.interference_scale *= g
    pad = geometry.pad_samples(fs)
    render.keyword_region = KeywordRegion(pad / fs, (pad + keyword.size) / fs)
    return render


def simu_set_specs(num_targets=4, num_interferers=4, patterns=10, seed=0,
                   min_separation=30.0, snr_db=0.0):
    """
    Scene descriptions in the shape of a two-talker simulated test set:
    every target/interferer identity pair, ``patterns`` times over with
    fresh angles and utterances.
    """
    rng = np.random.default_rng(seed)
    specs = []
    for p in range(patterns):
        for t in range(num_targets):
            for i in range(num_interferers):
                ta = float(rng.uniform(-60, 60))
                while True:
                    ia = float(rng.uniform(-80, 80))
                    if abs(ia - ta) >= min_separation:
                        break
                specs.append({
                    "id": f"scene{len(specs):04d}",
                    "target_speaker": f"T{t}",
                    "interferer_speaker": f"I{i}",
                    "target_azimuth": round(ta, 2),
                    "interferer_azimuth": round(ia, 2),
                    "target_distance": round(float(rng.uniform(1, 3)), 2),
                    "interferer_distance": round(float(rng.uniform(1, 3)), 2),
                    "snr_db": snr_db,
                    "seed": int(rng.integers(2 ** 31)),
                    "pattern": p,
                })
    return specs


def render_scene_spec(spec, geometry=None, fs=SAMPLE_RATE):
    """Render one scene description (dict). Signals come from WAV paths
    under the keys keyword/command/interference when present, otherwise
    they are synthesised from the speaker labels and the scene seed."""
    rng = np.random.default_rng(np.random.SeedSequence(
        [int(spec.get("seed", 0)), 7]))

    def load(key):
        path = spec.get(key)
        return None if path is None else read_wav(path).samples[0]

    keyword = load("keyword")
    if keyword is None:
        keyword = synth_keyword(rng, spec.get("target_speaker", "T0"), fs)
    command = load("command")
    if command is None:
        command = synth_babble(rng, spec.get("target_speaker", "T0"),
                               float(spec.get("command_s", 1.6)), fs)
    interference = load("interference")
    if interference is None:
        interference = synth_babble(rng, spec.get("interferer_speaker", "I0"),
                                    float(spec.get("interference_s", 3.0)), fs)
    scene = Scene(keyword, command, interference,
                  target_azimuth=float(spec.get("target_azimuth", 0.0)),
                  interferer_azimuth=float(spec.get("interferer_azimuth", 45.0)),
                  target_distance=float(spec.get("target_distance", 1.5)),
                  interferer_distance=float(spec.get("interferer_distance", 1.5)),
                  snr_db=float(spec.get("snr_db", 0.0)),
                  gap_s=float(spec.get("gap_s", 0.2)),
                  interference_gain=spec.get("interference_gain"))
    return build_eval_scene(scene, geometry, fs)


def write_scene(render, out_dir, spec=None):
    """Write mixture.wav, target.wav, interf.wav, regions.tsv (+ scene.json)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_wav(render.mixture, out / "mixture.wav")
    write_wav(render.target, out / "target.wav")
    write_wav(render.interference, out / "interf.wav")
    write_annotations([("mixture.wav", render.keyword_region)],
                      out / "regions.tsv")
    if spec is not None:
        with open(out / "scene.json", "w") as fp:
            json.dump(spec, fp, indent=2, sort_keys=True)
    return out


def read_scene(scene_dir):
    d = Path(scene_dir)
    entries = read_annotations(d / "regions.tsv")
    region = entries[0][1]
    return SceneRender(read_wav(d / "mixture.wav"), read_wav(d / "target.wav"),
                       read_wav(d / "interf.wav"), keyword_region=region)
