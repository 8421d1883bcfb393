"""
Shared fixtures for the lowres-tts tests.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.audio import AudioClip, write_wav
from lowres_tts.experiments import TOY_FEATURES, synthetic_corpus, toy_model_config


def make_tone(freq_hz, duration_sec, rate=22050, amplitude=0.5):
    n = int(round(duration_sec * rate))
    return amplitude * np.sin(2 * np.pi * freq_hz * np.arange(n) / rate)


def make_silence(duration_sec, rate=22050):
    return np.zeros(int(round(duration_sec * rate)))


@pytest.fixture
def tone():
    """Factory for sine tones as float64 arrays."""
    return make_tone


@pytest.fixture
def silence():
    """Factory for all-zero arrays."""
    return make_silence


@pytest.fixture
def clip_of():
    """Concatenate sample arrays into an AudioClip."""

    def build(*pieces, rate=22050):
        return AudioClip(np.concatenate(pieces), rate)

    return build


@pytest.fixture
def recordings_dir(tmp_path):
    """Two WAV/TXT pairs at 22.05 kHz: one two-sentence recording and one short one."""
    in_dir = tmp_path / "raw"
    in_dir.mkdir()
    rate = 22050
    first = np.concatenate([
        make_silence(0.3), make_tone(300, 1.0), make_silence(1.0), make_tone(500, 1.2), make_silence(0.3),
    ])
    write_wav(AudioClip(first, rate), in_dir / "a.wav")
    (in_dir / "a.txt").write_text("रामः वनं गच्छति। सीता अपि॥", encoding="utf-8")

    second = np.concatenate([make_silence(0.2), make_tone(400, 0.8), make_silence(0.2)])
    write_wav(AudioClip(second, rate), in_dir / "b.wav")
    (in_dir / "b.txt").write_text("धर्मः", encoding="utf-8")
    return in_dir


@pytest.fixture
def toy_corpus():
    """Five synthetic utterances over a small Devanagari alphabet and their table."""
    return synthetic_corpus("कखगघ", 5, seed=3)


@pytest.fixture
def toy_config():
    """Build a small float64 model config for a given vocabulary size."""
    import dataclasses

    def build(vocab_size, **changes):
        cfg = toy_model_config(vocab_size, n_mels=TOY_FEATURES.n_mels)
        return dataclasses.replace(cfg, dtype="float64", **changes)

    return build
