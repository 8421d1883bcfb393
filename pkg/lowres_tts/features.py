"""
Feature module for the lowres-tts toolkit.
Converts waveforms to natural-log mel spectrograms and caches them on disk.
"""

import struct
import logging
from pathlib import Path
from dataclasses import dataclass
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import librosa

from lowres_tts.audio import read_wav
from lowres_tts.config import ConfigError, worker_count
from lowres_tts.errors import TTSError

logger = logging.getLogger(__name__)

CACHE_MAGIC = b"MELS"
_CACHE_HEADER = struct.Struct("<4sIII")


@dataclass(frozen=True)
class FeatureConfig:
    fft_size: int = 1024
    hop: int = 256
    win_length: int = 1024
    n_mels: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 8000.0
    log_floor: float = 1e-5
    sample_rate_hz: int = 22050

    def __post_init__(self):
        if not 0 < self.hop <= self.win_length <= self.fft_size:
            raise ConfigError("features: need 0 < hop <= win_length <= fft_size")
        if not 0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2:
            raise ConfigError("features: need 0 <= fmin < fmax <= sample_rate / 2")
        if self.n_mels < 1:
            raise ConfigError("features: n_mels must be >= 1")
        if self.log_floor <= 0:
            raise ConfigError("features: log_floor must be positive")

    @property
    def n_bins(self):
        return self.fft_size // 2 + 1

    def n_frames(self, n_samples):
        """Frame count after reflection padding by fft_size/2 on both ends."""
        padded = n_samples + 2 * (self.fft_size // 2)
        return 1 + (padded - self.fft_size) // self.hop


@dataclass(frozen=True, eq=False)
class MelSpectrogram:
    """Frame-major ``(n_frames, n_mels)`` natural-log mel magnitudes."""

    values: np.ndarray
    config: FeatureConfig

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != self.config.n_mels:
            raise ValueError(f"mel values must be (frames, {self.config.n_mels}), got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self):
        return self.values.shape[0]

    def is_silent(self):
        """True when every entry sits at the log floor."""
        return bool(np.all(self.values <= np.log(self.config.log_floor) + 1e-9))


def stft_magnitude(clip, cfg):
    """Hann-windowed STFT magnitudes, ``(n_frames, fft_size/2 + 1)``, center-aligned frames."""
    if clip.sample_rate_hz != cfg.sample_rate_hz:
        raise RateMismatch(
            f"clip is {clip.sample_rate_hz} Hz but features expect {cfg.sample_rate_hz} Hz"
        )
    pad = cfg.fft_size // 2
    padded = np.pad(clip.samples, (pad, pad), mode="reflect")
    spec = librosa.stft(
        padded,
        n_fft=cfg.fft_size,
        hop_length=cfg.hop,
        win_length=cfg.win_length,
        window="hann",
        center=False,
    )
    return np.abs(spec).T


def mel_filterbank(cfg):
    """Triangular filters on the HTK mel scale, ``(n_mels, fft_size/2 + 1)``."""
    return librosa.filters.mel(
        sr=cfg.sample_rate_hz,
        n_fft=cfg.fft_size,
        n_mels=cfg.n_mels,
        fmin=cfg.fmin_hz,
        fmax=cfg.fmax_hz,
        htk=True,
        norm=None,
    )


def mel_center_frequencies(cfg):
    """Center frequency in Hz of every mel filter."""
    edges = librosa.mel_frequencies(cfg.n_mels + 2, fmin=cfg.fmin_hz, fmax=cfg.fmax_hz, htk=True)
    return edges[1:-1]


def mel_spectrogram(clip, cfg):
    """Log-mel spectrogram ``ln(max(filterbank . |STFT|, log_floor))``."""
    magnitude = stft_magnitude(clip, cfg)
    mel = magnitude @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(mel, cfg.log_floor)), cfg)


def write_mel_cache(mel, path):
    """Write the 16-byte MELS header and little-endian float32 values."""
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    with open(path, "wb") as handle:
        handle.write(_CACHE_HEADER.pack(CACHE_MAGIC, values.shape[0], values.shape[1], 0))
        handle.write(values.tobytes())


def read_mel_cache(path, cfg=None):
    """Read a MELS cache file back into a MelSpectrogram."""
    cfg = cfg or FeatureConfig()
    try:
        with open(path, "rb") as handle:
            header = handle.read(_CACHE_HEADER.size)
            magic, n_frames, n_mels, _ = _CACHE_HEADER.unpack(header)
            payload = handle.read()
    except FileNotFoundError as e:
        raise FeaturesMissing(str(path)) from e
    except struct.error as e:
        raise CorruptFeatures(f"{path}: truncated header") from e

    if magic != CACHE_MAGIC:
        raise CorruptFeatures(f"{path}: bad magic {magic!r}")
    if n_mels != cfg.n_mels:
        raise CorruptFeatures(f"{path}: {n_mels} mel bands, config expects {cfg.n_mels}")
    expected = n_frames * n_mels * 4
    if len(payload) != expected:
        raise CorruptFeatures(f"{path}: expected {expected} payload bytes, found {len(payload)}")
    values = np.frombuffer(payload, dtype="<f4").reshape(n_frames, n_mels).astype(np.float64)
    return MelSpectrogram(values, cfg)


def feature_path(feature_dir, utterance_id):
    return Path(feature_dir) / f"{utterance_id}.mel"


def extract_features(entries, audio_root, out_dir, cfg=None, workers=None):
    """Compute and cache the mel spectrogram of every manifest entry.

    Work runs on a thread pool; the returned paths follow manifest order.
    """
    cfg = cfg or FeatureConfig()
    audio_root, out_dir = Path(audio_root), Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def _extract(entry):
        clip = read_wav(audio_root / entry.audio_path)
        path = feature_path(out_dir, entry.utterance_id)
        write_mel_cache(mel_spectrogram(clip, cfg), path)
        return path

    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        paths = list(pool.map(_extract, entries))
    logger.info("Cached %d mel spectrograms in %s", len(paths), out_dir)
    return paths


class RateMismatch(TTSError):
    """Raised when a clip's sample rate differs from the feature config."""

    code = "E_RATE_MISMATCH"


class FeaturesMissing(TTSError):
    """Raised when a cached feature file does not exist."""

    code = "E_FEATURES_MISSING"


class CorruptFeatures(TTSError):
    """Raised when a cached feature file is malformed."""

    code = "E_CORRUPT_FEATURES"
