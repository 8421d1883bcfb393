"""
Tests for config files, overrides and the thread-count variable.
"""

import os
import sys

import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.config import (
    THREADS_ENV_VAR,
    ConfigError,
    apply_overrides,
    layered,
    load_config_file,
    worker_count,
)
from lowres_tts.features import FeatureConfig
from lowres_tts.trainer import TrainConfig


def test_sections_and_dotted_keys(tmp_path):
    """Headers and dotted keys load into the same shape."""
    path = tmp_path / "run.toml"
    path.write_text('train.epochs = 3\n\n[features]\nn_mels = 40\nfmax_hz = 4000\n', encoding="utf-8")
    config = load_config_file(path)
    assert config == {"train": {"epochs": 3}, "features": {"n_mels": 40, "fmax_hz": 4000}}


def test_unknown_section(tmp_path):
    """Typos in section names are errors."""
    path = tmp_path / "run.toml"
    path.write_text("[trian]\nepochs = 3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="trian"):
        load_config_file(path)


def test_unparseable_and_missing_files(tmp_path):
    """Syntax errors and missing files raise ConfigError."""
    path = tmp_path / "run.toml"
    path.write_text("[train\n", encoding="utf-8")
    with pytest.raises(ConfigError):
        load_config_file(path)
    with pytest.raises(ConfigError):
        load_config_file(tmp_path / "absent.toml")


def test_overrides_coerce_numbers():
    """Integers widen to float fields; the result is re-validated."""
    cfg = apply_overrides(FeatureConfig(), {"fmax_hz": 4000, "n_mels": 40}, "features")
    assert cfg.fmax_hz == 4000.0 and isinstance(cfg.fmax_hz, float)
    assert cfg.n_mels == 40
    with pytest.raises(ConfigError):
        apply_overrides(FeatureConfig(), {"fmax_hz": 20000}, "features")


def test_overrides_reject_bad_keys_and_types():
    """Unknown keys and wrong types name the offending setting."""
    with pytest.raises(ConfigError, match="features.n_mel"):
        apply_overrides(FeatureConfig(), {"n_mel": 40}, "features")
    with pytest.raises(ConfigError):
        apply_overrides(FeatureConfig(), {"n_mels": 40.5}, "features")
    with pytest.raises(ConfigError):
        apply_overrides(FeatureConfig(), {"n_mels": True}, "features")


def test_layering_order():
    """CLI flags beat the file, the file beats defaults, None means unset."""
    file_config = {"train": {"epochs": 7, "batch_size": 4}}
    cfg = layered(TrainConfig(), file_config, "train", {"epochs": 2, "seed": None})
    assert cfg.epochs == 2
    assert cfg.batch_size == 4
    assert cfg.seed == TrainConfig().seed


def test_worker_count(monkeypatch):
    """The environment variable bounds the worker pool."""
    monkeypatch.setenv(THREADS_ENV_VAR, "3")
    assert worker_count() == 3
    monkeypatch.delenv(THREADS_ENV_VAR)
    assert worker_count() >= 1
    for bad in ("zero", "0"):
        monkeypatch.setenv(THREADS_ENV_VAR, bad)
        with pytest.raises(ConfigError):
            worker_count()
