"""
Audio module for the lowres-tts toolkit.
Holds the AudioClip type, WAV input/output and polyphase resampling.
"""

import math
import logging
from dataclasses import dataclass

import numpy as np
import soundfile as sf
from scipy import signal

from lowres_tts.errors import TTSError

logger = logging.getLogger(__name__)

# Polyphase windowed-sinc design
TAPS_PER_PHASE = 48
KAISER_BETA = 8.6
CUTOFF_RATIO = 0.45


@dataclass(frozen=True, eq=False)
class AudioClip:
    """Mono waveform in [-1, 1] plus its sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise InvalidAudio(f"expected mono samples, got shape {samples.shape}")
        if samples.size == 0:
            raise InvalidAudio("audio clip has no samples")
        if not isinstance(self.sample_rate_hz, (int, np.integer)) or self.sample_rate_hz <= 0:
            raise InvalidAudio(f"invalid sample rate: {self.sample_rate_hz!r}")
        if not np.all(np.isfinite(samples)):
            raise InvalidAudio("audio clip contains non-finite samples")
        if np.max(np.abs(samples)) > 1.0:
            raise InvalidAudio("audio samples exceed [-1, 1]")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.size

    @property
    def duration_sec(self):
        return self.samples.size / self.sample_rate_hz

    @classmethod
    def from_unclamped(cls, samples, sample_rate_hz):
        """Build a clip after clamping samples into [-1, 1]."""
        return cls(np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0), sample_rate_hz)


def read_wav(path):
    """Read a 16-bit PCM WAV file into an AudioClip (samples divided by 32768)."""
    try:
        samples, rate = sf.read(str(path), dtype="float64", always_2d=False)
    except (RuntimeError, OSError) as e:
        raise InvalidAudio(f"cannot read {path}: {e}") from e
    if samples.ndim == 2:
        logger.warning("%s has %d channels; mixing down to mono", path, samples.shape[1])
        samples = samples.mean(axis=1)
    return AudioClip(samples, int(rate))


def write_wav(clip, path):
    """Write a clip as mono 16-bit PCM WAV."""
    sf.write(str(path), clip.samples, clip.sample_rate_hz, subtype="PCM_16")


def wav_duration(path):
    """Duration in seconds of a WAV file without decoding its samples."""
    try:
        info = sf.info(str(path))
    except (RuntimeError, OSError) as e:
        raise InvalidAudio(f"cannot read {path}: {e}") from e
    return info.frames / info.samplerate


def design_resampling_filter(up, down, source_rate_hz, target_rate_hz):
    """Kaiser-windowed sinc low-pass for a polyphase resampler.

    The cutoff sits at 0.45 of the lower of the two rates; the filter runs at
    the upsampled rate ``up * source_rate_hz``.
    """
    numtaps = TAPS_PER_PHASE * max(up, down) + 1
    cutoff_hz = CUTOFF_RATIO * min(source_rate_hz, target_rate_hz)
    nyquist_hz = up * source_rate_hz / 2.0
    return signal.firwin(numtaps, cutoff_hz / nyquist_hz, window=("kaiser", KAISER_BETA))


def resample(clip, target_rate_hz):
    """Resample a clip to ``target_rate_hz`` with a polyphase windowed-sinc filter."""
    if len(clip.samples) == 0:
        raise InvalidAudio("cannot resample an empty clip")
    if target_rate_hz <= 0:
        raise InvalidAudio(f"target rate must be positive, got {target_rate_hz}")

    source_rate_hz = clip.sample_rate_hz
    if source_rate_hz == target_rate_hz:
        return AudioClip(clip.samples.copy(), source_rate_hz)

    g = math.gcd(source_rate_hz, target_rate_hz)
    up, down = target_rate_hz // g, source_rate_hz // g
    taps = design_resampling_filter(up, down, source_rate_hz, target_rate_hz)
    out = signal.resample_poly(clip.samples, up, down, window=taps)
    return AudioClip.from_unclamped(out, target_rate_hz)


class InvalidAudio(TTSError):
    """Raised when audio samples or rates violate the clip invariants."""

    code = "E_INVALID_AUDIO"
