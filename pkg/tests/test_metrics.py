import csv
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kwbeam.beamformer import mvdr_filter
from kwbeam.errors import ValidationError
from kwbeam.metrics import (aggregate, output_sir, sdri, write_report_csv,
                            write_report_json)


def _specs(rng, t=20, f=8):
    d = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
    u = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
    return d, u


def test_all_ones_mask_gives_zero():
    d, u = _specs(np.random.default_rng(0))
    assert sdri(np.ones(d.shape), d, u).sdri_db == 0.0


def test_hand_computed_case():
    d = np.array([[2.0, 1.0], [1.0, 1.0]])
    u = np.array([[1.0, 1.0], [2.0, 1.0]])
    m = np.array([[1.0, 0.0], [0.5, 1.0]])
    # bin 0: masked (4 + 0.5) / (1 + 0.5 * 4) = 1.5, unmasked 5 / 5 = 1
    # bin 1: masked 1 / 1, unmasked 2 / 2
    rep = sdri(m, d, u)
    assert abs(rep.sdri_db - 10 * math.log10(1.5) / 2) < 1e-12
    assert abs(rep.xi_db) < 1e-12
    assert rep.excluded_bins == []


def test_squared_mask_option():
    d = np.array([[2.0], [1.0]])
    u = np.array([[1.0], [2.0]])
    m = np.array([[1.0], [0.5]])
    # (4 + 0.25) / (1 + 0.25 * 4)
    rep = sdri(m, d, u, mask_power=2)
    assert abs(rep.sdri_db - 10 * math.log10(4.25 / 2)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(1e-3, 1e3), st.floats(1e-3, 1e3))
def test_scale_invariance(seed, a, b):
    rng = np.random.default_rng(seed)
    d, u = _specs(rng)
    m = rng.random(d.shape)
    base = sdri(m, d, u).sdri_db
    assert abs(sdri(m, a * d, b * u).sdri_db - base) < 1e-12


def test_frame_selection():
    d, u = _specs(np.random.default_rng(1))
    m = np.random.default_rng(2).random(d.shape)
    frames = [3, 4, 5]
    assert sdri(m, d, u, frames).sdri_db == pytest.approx(
        sdri(m[frames], d[frames], u[frames]).sdri_db, abs=1e-12)


def test_silent_bins_excluded():
    d, u = _specs(np.random.default_rng(3), f=4)
    d[:, 2] = 0
    rep = sdri(np.ones(d.shape) * 0.7, d, u)
    assert rep.excluded_bins == [2]
    assert np.isnan(rep.per_bin[2])
    assert rep.to_dict()["per_bin"][2] is None


def test_zero_mask_bins_excluded():
    d, u = _specs(np.random.default_rng(4), f=3)
    m = np.ones(d.shape)
    m[:, 0] = 0
    assert sdri(m, d, u).excluded_bins == [0]


def test_all_excluded_raises():
    d, u = _specs(np.random.default_rng(5))
    with pytest.raises(ValidationError):
        sdri(np.zeros(d.shape), d, u)
    with pytest.raises(ValidationError):
        sdri(np.ones(d.shape), np.zeros(d.shape), np.zeros(d.shape))
    with pytest.raises(ValidationError):
        sdri(np.ones((2, 2)), d, u)


def _components(rng, c=4, t=30, f=6):
    a = rng.standard_normal((c, f)) + 1j * rng.standard_normal((c, f))
    b = rng.standard_normal((c, f)) + 1j * rng.standard_normal((c, f))
    s = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
    n = rng.standard_normal((t, f)) + 1j * rng.standard_normal((t, f))
    return a[:, None] * s[None], b[:, None] * n[None], a, b


def test_reference_channel_filter_gives_zero_gain():
    yt, yi, _, _ = _components(np.random.default_rng(6))
    gamma = np.zeros((6, 4), complex)
    gamma[:, 0] = 1
    res = output_sir(gamma, yt, yi)
    assert res.improvement_db == pytest.approx(0.0, abs=1e-12)
    assert res.sir_in_db == pytest.approx(res.sir_out_db, abs=1e-12)


def test_zero_interference_raises():
    yt, yi, _, _ = _components(np.random.default_rng(7))
    gamma = np.ones((6, 4), complex)
    with pytest.raises(ValidationError):
        output_sir(gamma, yt, np.zeros_like(yi))
    with pytest.raises(ValidationError):
        output_sir(gamma, yt, yi, frames=[])


@pytest.mark.parametrize("seed", range(5))
def test_mvdr_beats_every_single_channel(seed):
    # one bin, rank-one target: MVDR is the max-SIR filter
    rng = np.random.default_rng(seed)
    yt, yi, a, _ = _components(rng, f=1)
    noise = 0.1 * (rng.standard_normal(yi.shape)
                   + 1j * rng.standard_normal(yi.shape))
    yi = yi + noise
    Rii = np.einsum("ctf,dtf->fcd", yi, yi.conj())
    v = (a / np.linalg.norm(a, axis=0)).T
    gamma, _ = mvdr_filter(Rii, v, delta=0.0)
    best = output_sir(gamma, yt, yi).sir_out_db
    for ch in range(4):
        sel = np.zeros((1, 4), complex)
        sel[0, ch] = 1
        assert best >= output_sir(sel, yt, yi).sir_out_db - 1e-9


def test_aggregate_mean_and_population_std():
    rows = [{"x": 1.0, "y": None}, {"x": 2.0, "y": 5.0}, {"x": 6.0}]
    out = aggregate(rows, ["x", "y", "z"])
    assert out["x"]["mean"] == 3.0
    assert out["x"]["std"] == pytest.approx(math.sqrt(14 / 3), abs=1e-12)
    assert out["y"] == {"mean": 5.0, "std": 0.0, "count": 1}
    assert "z" not in out


def test_report_writers(tmp_path):
    rows = [{"scene_id": "s0", "mask_type": "m_k", "sdri_db": 1.5,
             "xi_db": -0.2, "sir_improvement_db": 7.0, "extra": 1}]
    write_report_csv(rows, tmp_path / "r.csv")
    with open(tmp_path / "r.csv") as fp:
        back = list(csv.DictReader(fp))
    assert back[0]["mask_type"] == "m_k" and float(back[0]["sdri_db"]) == 1.5
    assert "extra" not in back[0]
    write_report_json({"a": np.arange(3), "b": np.float64(2.0)},
                      tmp_path / "r.json")
    assert json.loads((tmp_path / "r.json").read_text()) == {"a": [0, 1, 2],
                                                             "b": 2.0}
