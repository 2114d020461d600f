import numpy as np
import pytest

from kwbeam.beamformer import oracle_masks
from kwbeam.errors import ValidationError
from kwbeam.metrics import sdri
from kwbeam.audio_io import region_to_frames
from kwbeam.simulator import (ArrayGeometry, Scene, build_eval_scene,
                              build_training_set, mix_at_snr, pairing_plan,
                              read_scene, render_scene_spec, simu_set_specs,
                              speaker_profile, steer, synth_babble,
                              synth_corpus, synth_keyword, write_scene)
from kwbeam.stft import StftConfig, stft, stft_multichannel


def _noise(seed, n=4000):
    return np.random.default_rng(seed).standard_normal(n)


def test_default_geometry():
    geo = ArrayGeometry()
    assert geo.channels == 4
    assert np.allclose(np.diff(geo.positions[:, 0]), 0.05)
    with pytest.raises(ValidationError):
        ArrayGeometry([[0, 0, 0], [0, 0, 0]])


def test_broadside_channels_identical():
    out = steer(_noise(0), ArrayGeometry(), 0.0)
    for ch in out[1:]:
        assert np.allclose(ch, out[0], atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3])
def test_integer_delay_is_a_shift(k):
    fs = 16000
    geo = ArrayGeometry([[0, 0, 0], [k * 343.0 / fs, 0, 0]], 343.0)
    x = _noise(k, 1000)
    out = steer(x, geo, 90.0)
    # the source sits towards +x, so mic 2 hears it k samples early
    assert np.allclose(out[1][:-k], out[0][k:], atol=1e-9)


def test_fractional_delay_cross_correlation():
    geo = ArrayGeometry()
    fs = 16000
    out = steer(_noise(1, 8000), geo, 30.0)
    expected = -geo.delays(30.0) * fs  # samples by which each mic leads
    for ch in range(1, 4):
        xc = np.correlate(out[0], out[ch], mode="full")
        peak = int(np.argmax(xc))
        # parabolic refinement of the peak position
        y0, y1, y2 = xc[peak - 1], xc[peak], xc[peak + 1]
        frac = 0.5 * (y0 - y2) / (y0 - 2 * y1 + y2)
        lag = peak + frac - (out.shape[1] - 1)
        assert abs(lag - expected[ch]) < 0.5


def test_steering_preserves_energy():
    x = _noise(2)
    out = steer(x, ArrayGeometry(), 37.0)
    for ch in out:
        assert abs(np.sum(ch ** 2) - np.sum(x ** 2)) < 1e-9 * np.sum(x ** 2)
    assert out.shape[1] % 2 == 1


def test_mix_at_zero_db_equal_power():
    t = _noise(3)[None]
    r = mix_at_snr(t, t.copy(), 0.0)
    assert r.interference_scale == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(r.mixture.samples, 2 * t)


@pytest.mark.parametrize("snr", [-5.0, 0.0, 3.2, 12.0])
def test_mix_at_snr_remeasured(snr):
    t = _noise(4)[None]
    i = 3.0 * _noise(5)[None]
    r = mix_at_snr(t, i, snr)
    p_t = np.mean(r.target.samples[0] ** 2)
    p_i = np.mean(r.interference.samples[0] ** 2)
    assert abs(10 * np.log10(p_t / p_i) - snr) < 0.01


def test_mix_at_snr_rejects():
    t = _noise(6)[None]
    with pytest.raises(ValidationError):
        mix_at_snr(t, t, np.inf)
    with pytest.raises(ValidationError):
        mix_at_snr(t, np.zeros_like(t), 0.0)


def test_speaker_profile_deterministic():
    assert speaker_profile("K01") == speaker_profile("K01")
    assert speaker_profile("K01") != speaker_profile("K02")


def test_synth_sources():
    rng = np.random.default_rng(0)
    kw = synth_keyword(rng, "K00")
    assert 0.5 < kw.size / 16000 < 0.9
    assert np.all(np.isfinite(kw))
    bab = synth_babble(rng, "B00", 1.5)
    assert bab.size == 24000


def test_corpus_deterministic():
    a = synth_corpus(2, 2, 2, 1, seed=3)
    b = synth_corpus(2, 2, 2, 1, seed=3)
    for (x, lx), (y, ly) in zip(a[0] + a[1], b[0] + b[1]):
        assert lx == ly and np.array_equal(x, y)
    assert [lbl for _, lbl in a[0]] == ["K00", "K00", "K01", "K01"]


def test_snr_draws_match_distribution():
    plan = pairing_plan(["a"], ["b"], 10000, seed=1)
    snrs = np.array([s for _, _, s in plan])
    assert abs(snrs.mean() - 3.2) < 0.1
    assert abs(snrs.std() - 3.4) < 0.1


def test_pairing_avoids_same_speaker():
    plan = pairing_plan(["x", "y"], ["x", "y"], 200, seed=2)
    for k, b, _ in plan:
        assert k != b
    with pytest.raises(ValidationError):
        pairing_plan(["x"], ["x"], 1, seed=0)


def test_training_set_deterministic_and_complementary():
    kws, bgs = synth_corpus(2, 2, 2, 2, seed=4)
    a = build_training_set(kws, bgs, 5, seed=9)
    b = build_training_set(kws, bgs, 5, seed=9)
    for x, y in zip(a, b):
        assert np.array_equal(x.mixture, y.mixture)
        assert x.snr_db == y.snr_db
    for ex in a:
        assert np.all(ex.ibm.keyword + ex.ibm.non_keyword == 1)
        assert ex.magnitude.shape[0] == ex.ibm.keyword.shape[0]
        assert ex.ibm.keyword.shape[1] == 256


def _scene(seed=0, **kw):
    rng = np.random.default_rng(seed)
    return Scene(synth_keyword(rng, "T0"), synth_babble(rng, "T0", 1.0),
                 synth_babble(rng, "I0", 2.0), **kw)


def test_zero_interference_gain():
    r = build_eval_scene(_scene(interference_gain=0.0))
    assert np.array_equal(r.mixture.samples, r.target.samples)


def test_eval_scene_region_and_additivity():
    sc = _scene(1, target_azimuth=-10.0, interferer_azimuth=40.0)
    r = build_eval_scene(sc)
    region = r.keyword_region
    assert region.end_s - region.start_s == pytest.approx(
        sc.keyword.size / 16000, abs=1e-12)
    cfg = StftConfig()
    Ym = stft_multichannel(r.mixture.samples, cfg)
    Yt = stft_multichannel(r.target.samples, cfg)
    Yi = stft_multichannel(r.interference.samples, cfg)
    assert np.max(np.abs(Ym - Yt - Yi)) < 1e-9
    assert np.max(np.abs(r.mixture.samples)) <= 0.9 + 1e-12


def test_oracle_ibm_sdri_positive():
    r = build_eval_scene(_scene(2, target_azimuth=0.0, interferer_azimuth=50.0))
    cfg = StftConfig()
    Yt = stft_multichannel(r.target.samples, cfg)
    Yi = stft_multichannel(r.interference.samples, cfg)
    frames = region_to_frames(r.keyword_region, 512, 256, Yt.shape[1])
    kw, _ = oracle_masks(Yt, Yi, frames)
    mask = np.concatenate([kw[0], kw[0][:, -1:]], axis=1)
    rep = sdri(mask, Yt[0, frames], Yi[0, frames])
    assert rep.sdri_db > 0


def test_scene_specs_and_render_deterministic(tmp_path):
    specs = simu_set_specs(2, 2, 2, seed=5)
    assert len(specs) == 8
    for s in specs:
        assert abs(s["target_azimuth"] - s["interferer_azimuth"]) >= 30
        assert s["target_speaker"] != s["interferer_speaker"]
    a = render_scene_spec(specs[0])
    b = render_scene_spec(specs[0])
    assert np.array_equal(a.mixture.samples, b.mixture.samples)
    write_scene(a, tmp_path / "s1", specs[0])
    write_scene(b, tmp_path / "s2", specs[0])
    for name in ("mixture.wav", "target.wav", "interf.wav", "regions.tsv",
                 "scene.json"):
        assert (tmp_path / "s1" / name).read_bytes() == \
            (tmp_path / "s2" / name).read_bytes()
    back = read_scene(tmp_path / "s1")
    assert back.mixture.channels == 4
    assert back.keyword_region.start_s == pytest.approx(
        a.keyword_region.start_s, abs=1e-6)


def test_scene_rejects_coincident_sources():
    with pytest.raises(ValidationError):
        _scene(target_azimuth=10.0, interferer_azimuth=10.5)


def test_stft_of_mono_channel_matches_multichannel():
    r = build_eval_scene(_scene(3))
    cfg = StftConfig()
    assert np.array_equal(stft(r.mixture.samples[1], cfg).data,
                          stft_multichannel(r.mixture.samples, cfg)[1])
