"""
Tests for audio clips, WAV I/O and resampling.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.audio import AudioClip, InvalidAudio, read_wav, resample, wav_duration, write_wav


def test_clip_rejects_out_of_range_samples():
    """Samples above 1.0 are rejected, clamping is explicit."""
    with pytest.raises(InvalidAudio):
        AudioClip(np.array([0.0, 1.5]), 22050)
    clip = AudioClip.from_unclamped(np.array([0.0, 1.5, -2.0]), 22050)
    assert clip.samples.tolist() == [0.0, 1.0, -1.0]


def test_clip_rejects_empty_and_bad_rate():
    """A clip needs at least one sample and a positive rate."""
    with pytest.raises(InvalidAudio):
        AudioClip(np.array([]), 22050)
    with pytest.raises(InvalidAudio):
        AudioClip(np.zeros(10), 0)


def test_wav_round_trip(tmp_path, tone):
    """16-bit PCM keeps samples within one quantization step."""
    clip = AudioClip(tone(440, 0.5), 22050)
    path = tmp_path / "tone.wav"
    write_wav(clip, path)
    back = read_wav(path)
    assert back.sample_rate_hz == 22050
    assert np.max(np.abs(back.samples - clip.samples)) <= 1.0 / 32768
    assert wav_duration(path) == pytest.approx(0.5)


def test_read_wav_missing_file(tmp_path):
    """Unreadable files surface as InvalidAudio."""
    with pytest.raises(InvalidAudio):
        read_wav(tmp_path / "missing.wav")


def test_resample_length_follows_rate_ratio(tone):
    """One second at 44.1 kHz becomes one second at 22.05 kHz."""
    clip = AudioClip(tone(440, 1.0, rate=44100), 44100)
    out = resample(clip, 22050)
    assert out.sample_rate_hz == 22050
    assert abs(len(out) - 22050) <= 1


def test_resample_silence_stays_silent():
    """All-zero input gives all-zero output of the scaled length."""
    out = resample(AudioClip(np.zeros(44100), 44100), 16000)
    assert abs(len(out) - 16000) <= 1
    assert not np.any(out.samples)


def test_resample_snr_against_analytic_sine(tone):
    """A 1 kHz sine resampled 44.1 -> 22.05 kHz stays within 60 dB of the ideal."""
    out = resample(AudioClip(tone(1000, 1.0, rate=44100), 44100), 22050)
    ideal = tone(1000, len(out) / 22050, rate=22050)[: len(out)]
    # Filter start-up transients are excluded
    edge = 200
    residual = out.samples[edge:-edge] - ideal[edge:-edge]
    snr_db = 10 * np.log10(np.sum(ideal[edge:-edge] ** 2) / np.sum(residual ** 2))
    assert snr_db >= 60.0


def test_resample_is_linear(tone):
    """Scaling the input scales the output."""
    x = tone(700, 0.25, rate=44100, amplitude=0.8)
    full = resample(AudioClip(x, 44100), 22050).samples
    half = resample(AudioClip(0.5 * x, 44100), 22050).samples
    np.testing.assert_allclose(half, 0.5 * full, rtol=1e-9, atol=1e-12)


def test_resample_same_rate_is_copy(tone):
    """Resampling to the source rate returns the samples unchanged."""
    clip = AudioClip(tone(440, 0.1), 22050)
    out = resample(clip, 22050)
    assert np.array_equal(out.samples, clip.samples)


def test_resample_rejects_bad_target(tone):
    """Target rates must be positive."""
    with pytest.raises(InvalidAudio):
        resample(AudioClip(tone(440, 0.1), 22050), 0)
