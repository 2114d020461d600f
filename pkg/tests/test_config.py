import pytest

from kwbeam.config import PipelineConfig, apply_overrides, load_config
from kwbeam.errors import ValidationError
from kwbeam.masknet import DEFAULT_DIMS


def test_defaults():
    cfg = PipelineConfig()
    assert cfg.model_dims == DEFAULT_DIMS
    assert cfg.stft.frame_len == 512 and cfg.stft.frame_shift == 256
    assert cfg.train.lr == 0.01 and cfg.train.batch_size == 128
    assert cfg.beamform.delta_loading == 1e-6
    assert cfg.simulate.mixtures == 500
    assert cfg.geometry().channels == 4


def test_toml_then_flags(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[train]\nepochs = 7\nlr = 0.05\n\n"
                    "[model]\nhidden = [8, 8, 8]\n\n"
                    "[feature]\nleft_context = 1\nright_context = 2\n")
    cfg = load_config(path, {"train": {"epochs": 3, "lr": None}})
    assert cfg.train.epochs == 3
    assert cfg.train.lr == 0.05
    assert cfg.model_dims == (256 * 4, 8, 8, 8, 512)


def test_unknown_keys_rejected(tmp_path):
    with pytest.raises(ValidationError):
        apply_overrides(PipelineConfig(), {"nope": {"a": 1}})
    with pytest.raises(ValidationError):
        apply_overrides(PipelineConfig(), {"train": {"momentun": 0.9}})


def test_invalid_values_rejected(tmp_path):
    with pytest.raises(ValidationError):
        apply_overrides(PipelineConfig(), {"train": {"epochs": 2.5}})
    with pytest.raises(ValidationError):
        apply_overrides(PipelineConfig(), {"train": {"dropout_input": 1.5}})
    with pytest.raises(ValidationError):
        apply_overrides(PipelineConfig(), {"stft": {"frame_len": 500}})
    path = tmp_path / "bad.toml"
    path.write_text("[train\n")
    with pytest.raises(ValidationError):
        load_config(path)


def test_geometry_follows_config():
    cfg = apply_overrides(PipelineConfig(),
                          {"simulate": {"channels": 6, "spacing": 0.03}})
    geo = cfg.geometry()
    assert geo.channels == 6
    assert geo.positions[1, 0] == pytest.approx(0.03)
