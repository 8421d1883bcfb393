"""
Evaluation module for the lowres-tts toolkit.
Attention diagonality, MOS reports with t-distribution intervals, loss-curve
export and alignment image input/output.
"""

import csv
import math
import logging
from pathlib import Path
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from lowres_tts.errors import TTSError  # noqa: E402
from lowres_tts.trainer import write_loss_log  # noqa: E402

logger = logging.getLogger(__name__)

DIMENSIONS = ("naturalness", "pronunciation")
MOS_HEADER = ("rater_id", "utterance_id", "dimension", "score")
ROW_SUM_TOLERANCE = 1e-6
_BAND_TOLERANCE = 1e-12


@dataclass(frozen=True, eq=False)
class AlignmentMatrix:
    """Decoder steps x encoder steps; every row is a probability vector."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise EmptyAlignment(f"alignment must be a non-empty matrix, got shape {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("alignment weights must be finite and non-negative")
        sums = values.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > ROW_SUM_TOLERANCE):
            raise ValueError("alignment rows must sum to 1")
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        return self.values.shape

    @classmethod
    def normalized(cls, values):
        """Rows rescaled to sum to one; all-zero rows become uniform."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.size == 0:
            raise EmptyAlignment(f"alignment must be a non-empty matrix, got shape {values.shape}")
        sums = values.sum(axis=1, keepdims=True)
        uniform = np.full_like(values, 1.0 / values.shape[1])
        safe = np.where(sums > 0, sums, 1.0)
        return cls(np.where(sums > 0, values / safe, uniform))


def band_mask(n_dec, n_enc, band):
    """Cells whose normalized positions differ by at most ``band``."""
    if n_dec == 1 or n_enc == 1:
        return np.ones((n_dec, n_enc), dtype=bool)
    t = np.arange(n_dec)[:, None] / (n_dec - 1)
    i = np.arange(n_enc)[None, :] / (n_enc - 1)
    return np.abs(i - t) <= band + _BAND_TOLERANCE


def diagonality(a, band=0.15):
    """Mean attention mass inside the diagonal band, in [0, 1]."""
    if not 0 < band <= 1:
        raise ValueError("band must lie in (0, 1]")
    values = a.values if isinstance(a, AlignmentMatrix) else np.asarray(a, dtype=np.float64)
    if values.ndim != 2 or values.size == 0:
        raise EmptyAlignment("alignment is empty")
    mask = band_mask(values.shape[0], values.shape[1], band)
    return float(np.mean(np.sum(values * mask, axis=1)))


def write_alignment_csv(a, path):
    np.savetxt(path, a.values, delimiter=",", fmt="%.17g")


def read_alignment_csv(path):
    try:
        values = np.loadtxt(path, delimiter=",", ndmin=2)
    except (OSError, ValueError) as e:
        raise EmptyAlignment(f"cannot read alignment {path}: {e}") from e
    return AlignmentMatrix.normalized(values)


def write_alignment_pgm(a, path):
    """8-bit binary PGM; one image row per decoder step, scaled to the peak weight."""
    values = a.values
    peak = values.max()
    pixels = np.round(values / peak * 255.0) if peak > 0 else np.zeros_like(values)
    height, width = values.shape
    with open(path, "wb") as handle:
        handle.write(f"P5\n{width} {height}\n255\n".encode("ascii"))
        handle.write(pixels.astype(np.uint8).tobytes())


def read_alignment_pgm(path):
    """Read an 8-bit PGM back; rows are renormalized to probability vectors."""
    with open(path, "rb") as handle:
        data = handle.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos)
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise EmptyAlignment(f"{path}: truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5" or int(tokens[3]) != 255:
        raise EmptyAlignment(f"{path}: expected an 8-bit binary PGM")
    width, height = int(tokens[1]), int(tokens[2])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise EmptyAlignment(f"{path}: truncated PGM data")
    return AlignmentMatrix.normalized(pixels.reshape(height, width).astype(np.float64))


def read_alignment(path):
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        return read_alignment_pgm(path)
    return read_alignment_csv(path)


@dataclass(frozen=True)
class MosSample:
    rater_id: str
    utterance_id: str
    dimension: str
    score: int

    def __post_init__(self):
        if self.dimension not in DIMENSIONS:
            raise InvalidScore(f"unknown dimension '{self.dimension}'")
        if isinstance(self.score, bool) or self.score not in (1, 2, 3, 4, 5):
            raise InvalidScore(f"score must be an integer 1..5, got {self.score!r}")


@dataclass(frozen=True)
class MosReport:
    dimension: str
    n: int
    mean: float
    half_width: float
    rater_means: dict = field(default_factory=dict)
    confidence: float = 0.95
    zero_variance: bool = False


@dataclass(frozen=True)
class OverallReport:
    mean: float
    half_width: float


def parse_mos_csv(path):
    """Read ``rater_id,utterance_id,dimension,score`` rows (header required)."""
    samples = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != MOS_HEADER:
            raise InvalidScore(f"{path}: expected header {','.join(MOS_HEADER)}")
        for number, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != len(MOS_HEADER):
                raise InvalidScore(f"{path}:{number}: expected {len(MOS_HEADER)} fields")
            rater, utterance, dimension, raw_score = (cell.strip() for cell in row)
            try:
                score = int(raw_score)
            except ValueError:
                raise InvalidScore(f"{path}:{number}: score {raw_score!r} is not an integer") from None
            try:
                samples.append(MosSample(rater, utterance, dimension.lower(), score))
            except InvalidScore as e:
                raise InvalidScore(f"{path}:{number}: {e}") from None
    return samples


def t_quantile(probability, df):
    """Student-t quantile."""
    return float(stats.t.ppf(probability, df))


def report_from_rater_means(rater_means, confidence=0.95, dimension=""):
    """MOS report from per-rater mean scores (``{rater: mean}``)."""
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    means = np.asarray(list(rater_means.values()), dtype=np.float64)
    n = means.size
    if n < 2:
        raise InsufficientRaters(f"{dimension or 'scores'}: need at least 2 raters, got {n}")
    s = float(np.std(means, ddof=1))
    half_width = t_quantile((1.0 + confidence) / 2.0, n - 1) * s / math.sqrt(n)
    return MosReport(
        dimension=dimension,
        n=n,
        mean=float(np.mean(means)),
        half_width=half_width,
        rater_means=dict(rater_means),
        confidence=confidence,
        zero_variance=s == 0.0,
    )


def mos_report(samples, confidence=0.95, dimension=None):
    """Per-rater means first, then the mean and t interval over raters."""
    dims = sorted({s.dimension for s in samples})
    if dimension is None:
        if len(dims) > 1:
            raise ValueError(f"samples cover several dimensions {dims}; pick one")
        dimension = dims[0] if dims else ""
    by_rater = {}
    for sample in samples:
        if sample.dimension == dimension:
            by_rater.setdefault(sample.rater_id, []).append(sample.score)
    rater_means = {rater: float(np.mean(scores)) for rater, scores in sorted(by_rater.items())}
    return report_from_rater_means(rater_means, confidence, dimension)


def overall_report(reports):
    """Unweighted mean of the dimension means and of their half-widths."""
    reports = list(reports)
    if not reports:
        raise InsufficientRaters("no dimension reports to combine")
    return OverallReport(
        mean=float(np.mean([r.mean for r in reports])),
        half_width=float(np.mean([r.half_width for r in reports])),
    )


def implied_sd(n, half_width, confidence=0.95):
    """Rater standard deviation implied by a reported interval half-width."""
    if not 0 < confidence < 1:
        raise ValueError("confidence must lie in (0, 1)")
    if n < 2:
        raise InsufficientRaters(f"need at least 2 raters, got {n}")
    return half_width * math.sqrt(n) / t_quantile((1.0 + confidence) / 2.0, n - 1)


def render_mos(reports, overall=None):
    lines = [f"{'dimension':<15}{'n':>5}{'mean':>9}{'half_width':>12}"]
    for r in reports:
        flag = "  zero-variance" if r.zero_variance else ""
        lines.append(f"{r.dimension:<15}{r.n:>5}{r.mean:>9.4f}{r.half_width:>12.4f}{flag}")
    if overall is not None:
        lines.append(f"{'Overall':<15}{'':>5}{overall.mean:>9.4f}{overall.half_width:>12.4f}")
    return "\n".join(lines)


def export_loss_plot(records, out_path):
    """Write ``<out>.csv`` and an SVG line chart ``<out>.svg`` of a loss log.

    The chart has a ``train_loss`` line and, when validations exist, a
    ``val_loss`` line. Returns the two paths.
    """
    records = list(records)
    if not records:
        raise EmptyLog("loss log has no records")
    out_path = Path(out_path)
    csv_path, svg_path = out_path.with_suffix(".csv"), out_path.with_suffix(".svg")
    write_loss_log(records, csv_path)

    iterations = [r.iteration for r in records]
    validated = [r for r in records if r.val_loss is not None]
    with plt.rc_context({"svg.hashsalt": "lowres-tts", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(7, 4))
        ax.plot(iterations, [r.train_loss for r in records], label="train", gid="train_loss")
        if validated:
            ax.plot(
                [r.iteration for r in validated], [r.val_loss for r in validated],
                label="validation", marker="o", gid="val_loss",
            )
        ax.set_xlabel("iteration")
        ax.set_ylabel("loss")
        ax.legend()
        fig.tight_layout()
        fig.savefig(svg_path, format="svg", metadata={"Date": None})
        plt.close(fig)
    logger.info("Wrote loss curve to %s", svg_path)
    return csv_path, svg_path


class EmptyAlignment(TTSError):
    """Raised when an alignment matrix has no cells or cannot be read."""

    code = "E_EMPTY_ALIGNMENT"


class InvalidScore(TTSError):
    """Raised when a MOS file row is malformed or out of range."""

    code = "E_INVALID_SCORE"


class InsufficientRaters(TTSError):
    """Raised when fewer than two raters remain for an interval."""

    code = "E_INSUFFICIENT_RATERS"


class EmptyLog(TTSError):
    """Raised when a loss log has no records."""

    code = "E_EMPTY_LOG"
