"""
Vocoder module for the lowres-tts toolkit.
Griffin-Lim reconstruction of waveforms from predicted mel spectrograms.
"""

import logging
import warnings

import numpy as np
import librosa

from lowres_tts.audio import AudioClip
from lowres_tts.features import stft_magnitude

logger = logging.getLogger(__name__)

PEAK_LEVEL = 0.95


def mel_to_magnitude(mel, cfg):
    """Linear STFT magnitudes ``(n_bins, n_frames)`` from a log-mel, by NNLS against the filterbank."""
    return librosa.feature.inverse.mel_to_stft(
        np.exp(mel.values).T,
        sr=cfg.sample_rate_hz,
        n_fft=cfg.fft_size,
        power=1.0,
        fmin=cfg.fmin_hz,
        fmax=cfg.fmax_hz,
        htk=True,
        norm=None,
    )


def output_length(n_frames, cfg):
    return max(1, (n_frames - 1) * cfg.hop)


def griffin_lim_magnitude(magnitude, n_iters, cfg, length=None):
    """Classic Griffin-Lim (no momentum, zero initial phase) on a linear magnitude."""
    return librosa.griffinlim(
        magnitude,
        n_iter=n_iters,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        n_fft=cfg.fft_size,
        window="hann",
        center=True,
        pad_mode="reflect",
        momentum=0.0,
        init=None,
        length=length,
    )


def griffin_lim(mel, n_iters, cfg):
    """Waveform for a mel spectrogram, peak-normalized to 0.95.

    An all-floor mel yields silence and a SilentInput warning.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    length = output_length(mel.n_frames, cfg)
    if mel.is_silent():
        logger.warning("Mel spectrogram is entirely at the log floor; returning silence")
        warnings.warn("all-floor mel spectrogram", SilentInput, stacklevel=2)
        return AudioClip(np.zeros(length), cfg.sample_rate_hz)

    samples = griffin_lim_magnitude(mel_to_magnitude(mel, cfg), n_iters, cfg, length=length)
    peak = float(np.max(np.abs(samples)))
    if peak > 0:
        samples = samples * (PEAK_LEVEL / peak)
    return AudioClip.from_unclamped(samples, cfg.sample_rate_hz)


def spectral_error(clip, magnitude, cfg):
    """Relative Frobenius distance between a clip's STFT magnitude and a target ``(n_bins, n_frames)``.

    Both sides are scale-normalized so peak normalization does not count.
    """
    produced = stft_magnitude(clip, cfg).T
    frames = min(produced.shape[1], magnitude.shape[1])
    produced, target = produced[:, :frames], magnitude[:, :frames]
    produced = produced / (np.linalg.norm(produced) or 1.0)
    target = target / (np.linalg.norm(target) or 1.0)
    return float(np.linalg.norm(produced - target))


class SilentInput(UserWarning):
    """Warned when Griffin-Lim is asked to invert an all-floor spectrogram."""

    code = "W_SILENT_INPUT"
