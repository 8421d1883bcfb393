"""
Corpus preparation module for the lowres-tts toolkit.
Turns raw (audio, transcript) pairs into a training manifest: resampling,
silence trimming, danda-based segmentation and corpus statistics.
"""

import json
import logging
from pathlib import Path
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import librosa

from lowres_tts.audio import AudioClip, read_wav, write_wav, wav_duration, resample
from lowres_tts.config import ConfigError, worker_count
from lowres_tts.errors import TTSError
from lowres_tts.text import SymbolTable, EmptyText, clean_text, split_sentences

logger = logging.getLogger(__name__)

MANIFEST_NAME = "metadata.tsv"
SYMBOLS_NAME = "symbols.json"
CORPUS_INFO_NAME = "corpus.json"


@dataclass(frozen=True)
class VadConfig:
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    threshold_db: float = -40.0
    max_internal_silence_sec: float = 0.5
    min_silence_run_sec: float = 0.2

    def __post_init__(self):
        if not self.frame_ms >= self.hop_ms > 0:
            raise ConfigError("vad: need frame_ms >= hop_ms > 0")
        if self.max_internal_silence_sec <= 0:
            raise ConfigError("vad: max_internal_silence_sec must be positive")
        if self.min_silence_run_sec < 0:
            raise ConfigError("vad: min_silence_run_sec must be >= 0")
        if self.threshold_db >= 0:
            raise ConfigError("vad: threshold_db is relative to the peak and must be negative")

    def frame_samples(self, sample_rate_hz):
        return max(1, int(round(self.frame_ms * sample_rate_hz / 1000.0)))

    def hop_samples(self, sample_rate_hz):
        return max(1, int(round(self.hop_ms * sample_rate_hz / 1000.0)))


@dataclass(frozen=True)
class PrepConfig:
    rate: int = 22050
    max_chunk_sec: float = 10.0
    trim: bool = True

    def __post_init__(self):
        if self.rate <= 0:
            raise ConfigError("prep: rate must be positive")
        if self.max_chunk_sec <= 0:
            raise ConfigError("prep: max_chunk_sec must be positive")


def voiced_intervals(clip, cfg):
    """Sample intervals ``[start, end)`` the VAD considers voiced.

    Frames are voiced when their RMS is within ``threshold_db`` of the loudest
    frame. Interval edges are then tightened to the first/last sample whose
    magnitude reaches the same threshold, and intervals separated by less than
    ``min_silence_run_sec`` are merged.
    """
    x = clip.samples
    rate = clip.sample_rate_hz
    frame = cfg.frame_samples(rate)
    hop = cfg.hop_samples(rate)

    if not np.any(x):
        raise EmptyAfterTrim("clip is entirely silent")

    rms = librosa.feature.rms(y=x, frame_length=frame, hop_length=hop)[0]
    amplitude_threshold = rms.max() * 10.0 ** (cfg.threshold_db / 20.0)
    coarse = librosa.effects.split(
        x, top_db=-cfg.threshold_db, frame_length=frame, hop_length=hop
    )

    refined = []
    loud = np.abs(x) >= amplitude_threshold
    for start, end in coarse:
        # Centered frames reach half a frame past the reported edges
        lo = max(0, int(start) - frame // 2)
        hi = min(x.size, int(end) + frame // 2)
        hits = np.flatnonzero(loud[lo:hi])
        if hits.size == 0:
            continue
        refined.append([lo + int(hits[0]), lo + int(hits[-1]) + 1])

    if not refined:
        raise EmptyAfterTrim("no frame rises above the silence threshold")

    min_gap = int(round(cfg.min_silence_run_sec * rate))
    merged = [refined[0]]
    for start, end in refined[1:]:
        if start - merged[-1][1] < min_gap:
            merged[-1][1] = max(merged[-1][1], end)
        else:
            merged.append([start, end])
    return [(start, end) for start, end in merged]


def trim_silences(clip, cfg):
    """Remove leading/trailing silence and cap interior silences.

    Interior runs longer than ``max_internal_silence_sec`` keep their first and
    last halves of that length; voiced samples are copied untouched.
    """
    frame = cfg.frame_samples(clip.sample_rate_hz)
    if len(clip) <= frame:
        raise EmptyAfterTrim("clip is shorter than one VAD frame")
    intervals = voiced_intervals(clip, cfg)
    cap = int(round(cfg.max_internal_silence_sec * clip.sample_rate_hz))

    x = clip.samples
    pieces = []
    for index, (start, end) in enumerate(intervals):
        if index > 0:
            gap_start = intervals[index - 1][1]
            if start - gap_start > cap:
                head = cap // 2
                pieces.append(x[gap_start:gap_start + head])
                pieces.append(x[start - (cap - head):start])
            else:
                pieces.append(x[gap_start:start])
        pieces.append(x[start:end])
    return AudioClip(np.concatenate(pieces), clip.sample_rate_hz)


def segment(clip, raw_text, max_chunk_sec=10.0, vad=None):
    """Split a trimmed clip and its transcript into aligned chunks.

    Text splits at danda / double danda; audio splits at the detected
    silences, one cut in the middle of every gap between voiced spans. The two
    counts must agree. Returns a list of ``(AudioClip, text)`` pairs.
    """
    if max_chunk_sec <= 0:
        raise ConfigError("max_chunk_sec must be positive")
    vad = vad or VadConfig()
    texts = split_sentences(raw_text)
    if not texts:
        raise EmptyText("transcript has no text between sentence marks")

    rate = clip.sample_rate_hz
    max_samples = max_chunk_sec * rate
    intervals = voiced_intervals(clip, vad)
    for start, end in intervals:
        if end - start > max_samples:
            raise UnsplittableSpan(
                f"voiced span of {(end - start) / rate:.2f}s exceeds the "
                f"{max_chunk_sec}s chunk limit"
            )
    if len(intervals) != len(texts):
        raise AlignmentMismatch(len(intervals), len(texts))

    cuts = [(intervals[k][1] + intervals[k + 1][0]) // 2 for k in range(len(intervals) - 1)]
    bounds = [0] + cuts + [len(clip)]

    pairs = []
    for (a, b), text in zip(zip(bounds[:-1], bounds[1:]), texts):
        if b - a > max_samples:
            raise AlignmentMismatch(
                len(intervals), len(texts),
                detail=f"a {(b - a) / rate:.2f}s piece exceeds the chunk limit",
            )
        pairs.append((AudioClip(clip.samples[a:b], rate), text))
    return pairs


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    text: str
    duration_sec: float

    def __post_init__(self):
        if not self.text:
            raise ValueError(f"manifest entry {self.audio_path} has no text")
        if not self.duration_sec > 0:
            raise ValueError(f"manifest entry {self.audio_path} has non-positive duration")

    @property
    def utterance_id(self):
        return Path(self.audio_path).stem


def write_manifest(entries, path):
    """Write ``<relative-audio-path>\\t<normalized-text>`` lines (LF, no header)."""
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        for entry in entries:
            handle.write(f"{entry.audio_path}\t{entry.text}\n")


def read_manifest(path, audio_root=None):
    """Read a manifest; durations come from the WAV headers under ``audio_root``.

    ``audio_root`` defaults to the manifest's directory.
    """
    path = Path(path)
    root = Path(audio_root) if audio_root is not None else path.parent
    entries = []
    try:
        with open(path, "r", encoding="utf-8") as handle:
            lines = handle.read().splitlines()
    except OSError as e:
        raise ManifestError(f"cannot read manifest {path}: {e}") from e

    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        audio_path, sep, text = line.partition("\t")
        if not sep or not text.strip():
            raise ManifestError(f"{path}:{number}: expected '<audio-path>\\t<text>'")
        duration = wav_duration(root / audio_path)
        entries.append(ManifestEntry(audio_path, text, duration))
    return entries


@dataclass(frozen=True)
class CorpusStats:
    num_utterances: int
    total_duration_sec: float
    word_vocab_size: int
    min_utterance_sec: float
    max_utterance_sec: float
    avg_utterance_sec: float


def corpus_stats(entries):
    """Compute corpus statistics; the vocabulary counts whitespace-separated words."""
    entries = list(entries)
    if not entries:
        raise EmptyManifest("manifest has no entries")
    durations = [entry.duration_sec for entry in entries]
    total = sum(durations)
    words = set()
    for entry in entries:
        words.update(entry.text.split())
    return CorpusStats(
        num_utterances=len(entries),
        total_duration_sec=total,
        word_vocab_size=len(words),
        min_utterance_sec=min(durations),
        max_utterance_sec=max(durations),
        avg_utterance_sec=total / len(entries),
    )


def format_duration(seconds):
    """Render seconds the way the dataset table does: ``2h 35min 17sec``."""
    whole = int(round(seconds))
    hours, rest = divmod(whole, 3600)
    minutes, secs = divmod(rest, 60)
    return f"{hours}h {minutes}min {secs}sec"


def render_stats(stats):
    """Aligned human-readable table followed by a machine-readable key=value block."""
    rows = [
        ("Number of utterances", str(stats.num_utterances)),
        ("Total duration", format_duration(stats.total_duration_sec)),
        ("Vocabulary size", str(stats.word_vocab_size)),
        ("Minimum length of utterance", f"{stats.min_utterance_sec:.2f} sec"),
        ("Maximum length of utterance", f"{stats.max_utterance_sec:.2f} sec"),
        ("Average length of utterance", f"{stats.avg_utterance_sec:.2f} sec"),
    ]
    width = max(len(label) for label, _ in rows)
    lines = [f"{label.ljust(width)}  {value}" for label, value in rows]
    lines.append("")
    lines.append(f"num_utterances={stats.num_utterances}")
    lines.append(f"total_duration_sec={stats.total_duration_sec!r}")
    lines.append(f"word_vocab_size={stats.word_vocab_size}")
    lines.append(f"min_utterance_sec={stats.min_utterance_sec!r}")
    lines.append(f"max_utterance_sec={stats.max_utterance_sec!r}")
    lines.append(f"avg_utterance_sec={stats.avg_utterance_sec!r}")
    return "\n".join(lines)


@dataclass
class PrepSummary:
    entries: list
    table: SymbolTable
    skipped: list = field(default_factory=list)


def prepare_clip(clip, raw_text, prep_cfg, vad_cfg):
    """Resample, trim and segment one recording."""
    clip = resample(clip, prep_cfg.rate)
    if prep_cfg.trim:
        clip = trim_silences(clip, vad_cfg)
    return segment(clip, raw_text, prep_cfg.max_chunk_sec, vad_cfg)


class CorpusPreparer:
    """Runs the preprocessing chain over a directory of ``<stem>.wav`` + ``<stem>.txt`` pairs."""

    def __init__(self, prep_cfg=None, vad_cfg=None, workers=None):
        self.prep_cfg = prep_cfg or PrepConfig()
        self.vad_cfg = vad_cfg or VadConfig()
        self.workers = workers or worker_count()

    def _process(self, wav_path):
        txt_path = wav_path.with_suffix(".txt")
        try:
            with open(txt_path, "r", encoding="utf-8") as handle:
                raw_text = handle.read()
            clip = read_wav(wav_path)
            return prepare_clip(clip, raw_text, self.prep_cfg, self.vad_cfg), None
        except (TTSError, OSError) as e:
            return None, e

    def run(self, in_dir, out_dir):
        """Prepare every recording under ``in_dir``; results keep input order."""
        in_dir, out_dir = Path(in_dir), Path(out_dir)
        wav_paths = sorted(in_dir.glob("*.wav"))
        if not wav_paths:
            raise EmptyManifest(f"no .wav files under {in_dir}")

        wav_dir = out_dir / "wavs"
        wav_dir.mkdir(parents=True, exist_ok=True)

        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            results = list(pool.map(self._process, wav_paths))

        entries, skipped = [], []
        for wav_path, (pairs, error) in zip(wav_paths, results):
            if error is not None:
                logger.warning("Skipping %s: %s", wav_path.name, error)
                skipped.append((wav_path.name, str(error)))
                continue
            for index, (piece, text) in enumerate(pairs):
                cleaned = clean_text(text)
                if not cleaned:
                    continue
                rel_path = f"wavs/{wav_path.stem}_{index:03d}.wav"
                write_wav(piece, out_dir / rel_path)
                entries.append(ManifestEntry(rel_path, cleaned, piece.duration_sec))

        if not entries:
            raise EmptyManifest(f"no usable recordings under {in_dir}")

        write_manifest(entries, out_dir / MANIFEST_NAME)
        table = SymbolTable.from_texts(entry.text for entry in entries)
        table.save(out_dir / SYMBOLS_NAME)
        write_corpus_info(out_dir, self.prep_cfg.rate)
        logger.info(
            "Prepared %d utterances from %d recordings (%d skipped)",
            len(entries), len(wav_paths), len(skipped),
        )
        return PrepSummary(entries, table, skipped)


def write_corpus_info(corpus_dir, sample_rate_hz):
    """Record the rate every WAV under ``corpus_dir/wavs`` was written at."""
    with open(Path(corpus_dir) / CORPUS_INFO_NAME, "w", encoding="utf-8") as handle:
        json.dump({"sample_rate_hz": int(sample_rate_hz)}, handle)
        handle.write("\n")


def corpus_rate(corpus_dir):
    """Sample rate recorded by ``prep`` for a corpus, or None when there is no record."""
    path = Path(corpus_dir) / CORPUS_INFO_NAME
    if not path.exists():
        return None
    try:
        with open(path, "r", encoding="utf-8") as handle:
            rate = json.load(handle)["sample_rate_hz"]
    except (OSError, ValueError, KeyError, TypeError) as e:
        raise ManifestError(f"cannot read corpus info {path}: {e}") from e
    if not isinstance(rate, int) or rate <= 0:
        raise ManifestError(f"{path}: invalid sample_rate_hz {rate!r}")
    return rate


def prepare_corpus(in_dir, out_dir, prep_cfg=None, vad_cfg=None, workers=None):
    """Prepare a directory of recordings into a manifest, WAV pieces and a symbol table."""
    return CorpusPreparer(prep_cfg, vad_cfg, workers).run(in_dir, out_dir)


class EmptyAfterTrim(TTSError):
    """Raised when a clip has no voiced region."""

    code = "E_EMPTY_AFTER_TRIM"


class AlignmentMismatch(TTSError):
    """Raised when audio pieces cannot be paired one-to-one with sentences."""

    code = "E_ALIGNMENT_MISMATCH"

    def __init__(self, audio_count, text_count, detail=None):
        self.audio_count = audio_count
        self.text_count = text_count
        message = f"{audio_count} audio piece(s) vs {text_count} text piece(s)"
        if detail:
            message = f"{message}: {detail}"
        super().__init__(message)


class UnsplittableSpan(TTSError):
    """Raised when one voiced span is longer than the chunk limit."""

    code = "E_UNSPLITTABLE_SPAN"


class EmptyManifest(TTSError):
    """Raised when a manifest or input directory holds no usable entries."""

    code = "E_EMPTY_MANIFEST"


class ManifestError(TTSError):
    """Raised when a manifest file cannot be read or parsed."""

    code = "E_MANIFEST"
