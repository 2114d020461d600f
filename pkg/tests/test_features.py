import numpy as np
import pytest

from kwbeam.errors import FormatError, ValidationError
from kwbeam.features import (STD_FLOOR, FeatureConfig, StatsAccumulator,
                             accumulate_stats, denormalize, load_stats,
                             normalize, save_stats, splice)

CFG = FeatureConfig()


def naive_splice(mag, left=10, right=10, dim=256):
    rows = []
    t_total = mag.shape[0]
    for t in range(t_total):
        parts = []
        for k in range(t - left, t + right + 1):
            parts.append(mag[min(max(k, 0), t_total - 1), :dim])
        rows.append(np.concatenate(parts))
    return np.array(rows)


def test_dims():
    assert CFG.spliced_dim == 5376 == 256 * 21


def test_single_frame_replicated():
    rng = np.random.default_rng(0)
    mag = rng.random((1, 257))
    out = splice(mag)
    assert out.shape == (1, 5376)
    assert np.array_equal(out[0], np.tile(mag[0, :256], 21))


def test_constant_spectrogram():
    v = np.linspace(0, 1, 257)
    out = splice(np.tile(v, (9, 1)))
    assert np.array_equal(out, np.tile(np.tile(v[:256], 21), (9, 1)))


def test_matches_naive_loop():
    rng = np.random.default_rng(1)
    mag = rng.random((40, 257))
    assert np.array_equal(splice(mag), naive_splice(mag))


@pytest.mark.parametrize("frames", [1, 5, 21, 33])
def test_row_count(frames):
    assert splice(np.ones((frames, 257))).shape[0] == frames


def test_splice_rejects_narrow_input():
    with pytest.raises(ValidationError):
        splice(np.ones((3, 100)))


def test_identical_frames_hit_floor():
    stats = accumulate_stats([np.ones((5, 4)), np.ones((3, 4))])
    assert np.all(stats.std == STD_FLOOR)
    assert stats.count == 8


def test_two_frames():
    a = np.array([[1.0, -2.0, 5.0]])
    b = np.array([[3.0, 2.0, 5.5]])
    stats = accumulate_stats([a, b])
    assert np.allclose(stats.mean, (a[0] + b[0]) / 2)
    assert np.allclose(stats.std, np.abs(a[0] - b[0]) / 2)


def test_matches_two_pass_reference():
    rng = np.random.default_rng(2)
    corpus = [rng.normal(3, 2, size=(n, 6)) for n in (4, 17, 1, 30)]
    stacked = np.concatenate(corpus)
    mean = stacked.sum(axis=0) / len(stacked)
    std = np.sqrt(((stacked - mean) ** 2).sum(axis=0) / len(stacked))
    stats = accumulate_stats(corpus)
    assert np.allclose(stats.mean, mean, rtol=1e-10, atol=0)
    assert np.allclose(stats.std, std, rtol=1e-10, atol=0)


def test_order_independent():
    rng = np.random.default_rng(3)
    corpus = [rng.normal(1, 5, size=(rng.integers(2, 20), 8)) for _ in range(12)]
    a = accumulate_stats(corpus)
    b = accumulate_stats([corpus[i] for i in rng.permutation(len(corpus))])
    assert np.allclose(a.mean, b.mean, rtol=1e-9, atol=0)
    assert np.allclose(a.std, b.std, rtol=1e-9, atol=0)


def test_partial_accumulators_merge():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((50, 3))
    whole = StatsAccumulator(3).update(x).finalize()
    left = StatsAccumulator(3).update(x[:20])
    right = StatsAccumulator(3).update(x[20:])
    merged = right.merge(left).finalize()
    assert np.allclose(merged.mean, whole.mean, atol=1e-14)
    assert np.allclose(merged.std, whole.std, atol=1e-14)


def test_empty_corpus():
    with pytest.raises(ValidationError):
        accumulate_stats([])
    with pytest.raises(ValidationError):
        accumulate_stats([np.ones((1, 3))])


def test_normalize_mean_is_zero():
    rng = np.random.default_rng(5)
    x = rng.random((4, 6))
    stats = accumulate_stats([x])
    assert np.allclose(normalize(stats.mean[None], stats), 0.0)


def test_normalized_corpus_is_standardized():
    rng = np.random.default_rng(6)
    corpus = [rng.gamma(2.0, 3.0, size=(n, 10)) for n in (20, 40, 7)]
    stats = accumulate_stats(corpus)
    z = normalize(np.concatenate(corpus), stats)
    assert np.all(np.abs(z.mean(axis=0)) < 1e-8)
    assert np.allclose(z.std(axis=0), 1.0, atol=1e-6)


def test_normalize_invertible():
    rng = np.random.default_rng(7)
    x = rng.random((9, 5))
    stats = accumulate_stats([rng.random((10, 5))])
    assert np.allclose(denormalize(normalize(x, stats), stats), x, atol=1e-10)


def test_normalize_dim_mismatch():
    stats = accumulate_stats([np.random.default_rng(0).random((3, 4))])
    with pytest.raises(ValidationError):
        normalize(np.ones((2, 5)), stats)


def test_stats_file_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    stats = accumulate_stats([rng.random((10, 7))])
    path = tmp_path / "s.kwnorm"
    save_stats(stats, path)
    raw = path.read_bytes()
    assert raw[:7] == b"KWNORM1"
    assert len(raw) == 7 + 4 + 8 + 2 * 7 * 8
    back = load_stats(path)
    assert back.count == stats.count
    assert np.array_equal(back.mean, stats.mean)
    assert np.array_equal(back.std, stats.std)
    path.write_bytes(b"XXXXXXX" + raw[7:])
    with pytest.raises(FormatError):
        load_stats(path)
