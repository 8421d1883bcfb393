"""
Experiments module for the lowres-tts toolkit.
Desk-scale convergence comparisons on template-generated corpora: silence
padded vs trimmed inputs, and warm-started vs cold-started training.
"""

import logging
import statistics
from dataclasses import dataclass, field

import numpy as np
import torch

from lowres_tts.audio import AudioClip
from lowres_tts.corpus import VadConfig, trim_silences
from lowres_tts.evaluation import diagonality
from lowres_tts.features import FeatureConfig, mel_spectrogram
from lowres_tts.model import DropoutSource, ModelConfig, pad_batch
from lowres_tts.text import SymbolTable, normalize_text
from lowres_tts.trainer import AdamConfig, InMemoryDataset, TrainConfig, fit
from lowres_tts.transfer import TransferSpec

logger = logging.getLogger(__name__)

LATIN_SYMBOLS = "abcdefgh"
DEVANAGARI_SYMBOLS = "कखगघचजतप"

TOY_FEATURES = FeatureConfig(
    fft_size=256, hop=64, win_length=256, n_mels=16, fmin_hz=0.0, fmax_hz=4000.0,
    sample_rate_hz=8000,
)


def toy_model_config(vocab_size, n_mels=TOY_FEATURES.n_mels):
    return ModelConfig(
        vocab_size=vocab_size,
        embed_dim=32,
        encoder_conv_layers=2,
        encoder_rnn_dim=32,
        attention_dim=16,
        location_filters=4,
        location_kernel=7,
        attention_rnn_dim=64,
        decoder_rnn_dim=64,
        prenet_dim=32,
        n_mels=n_mels,
        postnet_layers=2,
        postnet_dim=32,
        max_decoder_steps=200,
        dtype="float32",
    )


def symbol_tone(index, n_symbols, cfg):
    """Tone frequency of symbol ``index``, spread over the analysis band."""
    low, high = 300.0, 0.8 * cfg.fmax_hz
    return low + (high - low) * index / max(1, n_symbols - 1)


def render_utterance(text, alphabet, cfg, frames_per_symbol=4, pad_sec=0.0):
    """Audio for ``text``: one tone burst per symbol, optional silence on both ends."""
    n = frames_per_symbol * cfg.hop
    t = np.arange(n) / cfg.sample_rate_hz
    ramp = np.minimum(1.0, np.minimum(np.arange(n), np.arange(n)[::-1]) / (0.1 * n))
    pieces = []
    for ch in text:
        freq = symbol_tone(alphabet.index(ch), len(alphabet), cfg)
        pieces.append(0.5 * ramp * np.sin(2 * np.pi * freq * t))
    pad = np.zeros(int(round(pad_sec * cfg.sample_rate_hz)))
    return AudioClip(np.concatenate([pad, *pieces, pad]), cfg.sample_rate_hz)


def synthetic_corpus(alphabet, n_utterances, seed, cfg=TOY_FEATURES, min_len=3, max_len=6,
                     frames_per_symbol=4, pad_sec=0.0, trim=False):
    """Random strings over ``alphabet`` with their rendered mel spectrograms.

    With ``trim`` each rendered clip goes through ``trim_silences`` first.

    Returns ``(items, table)`` where items are ``(utterance_id, ids, mel)``.
    """
    rng = np.random.default_rng(seed)
    table = SymbolTable(sorted(alphabet))
    items = []
    for k in range(n_utterances):
        length = int(rng.integers(min_len, max_len + 1))
        text = "".join(rng.choice(list(alphabet), size=length))
        clip = render_utterance(text, alphabet, cfg, frames_per_symbol, pad_sec)
        if trim:
            clip = trim_silences(clip, VadConfig())
        mel = mel_spectrogram(clip, cfg).values
        items.append((f"syn_{k:03d}", normalize_text(text, table).ids, mel))
    return items, table


def toy_train_config(seed, cap, batch_size=4):
    return TrainConfig(
        epochs=10 ** 6,
        batch_size=batch_size,
        validation_interval_iters=cap,
        seed=seed,
        max_iterations=cap,
        val_fraction=0.0,
    )


def mean_diagonality(model, items, band=0.15):
    """Teacher-forced diagonality averaged over ``items`` with dropout off."""
    _, sequences, mels = zip(*items)
    batch = pad_batch(sequences, mels, dtype=model.cfg.torch_dtype)
    with torch.no_grad():
        output = model(batch, DropoutSource(False))
    scores = []
    for row in range(len(items)):
        frames = int(batch.output_lengths[row])
        symbols = int(batch.input_lengths[row])
        scores.append(diagonality(output.alignments[row, :frames, :symbols].double().numpy(), band))
    return float(np.mean(scores))


def iterations_to_diagonality(items, table, seed, cap, threshold=0.7, band=0.15,
                              eval_every=50, lr=2e-3, n_checked=4):
    """First checked iteration whose alignments reach ``threshold``; ``cap`` if never."""
    model_cfg = toy_model_config(len(table))
    checked_items = items[:n_checked]

    def reached(record, model):
        if record.iteration % eval_every:
            return False
        return mean_diagonality(model, checked_items, band) >= threshold

    result = fit(
        InMemoryDataset(items), table, model_cfg,
        train_cfg=toy_train_config(seed, cap), adam_cfg=AdamConfig(lr=lr),
        callback=reached,
    )
    return result.records[-1].iteration if result.stopped_early else cap


def smoothed(records, window=10):
    losses = [r.train_loss for r in records]
    return [float(np.mean(losses[max(0, i - window + 1):i + 1])) for i in range(len(losses))]


def first_reaching(records, tau, window=10):
    """Iteration at which the trailing mean loss first drops to ``tau``."""
    for index, value in enumerate(smoothed(records, window)):
        if index + 1 >= window and value <= tau:
            return records[index].iteration
    return records[-1].iteration


def iterations_to_loss(items, table, seed, cap, tau, lr=2e-3, warm_start=None, window=10):
    """First iteration whose trailing mean train loss is at most ``tau``; ``cap`` if never."""
    model_cfg = toy_model_config(len(table))
    recent = []

    def reached(record, model):
        recent.append(record.train_loss)
        return len(recent) >= window and float(np.mean(recent[-window:])) <= tau

    result = fit(
        InMemoryDataset(items), table, model_cfg,
        train_cfg=toy_train_config(seed, cap), adam_cfg=AdamConfig(lr=lr),
        warm_start=warm_start, transfer_spec=TransferSpec(seed=seed),
        callback=reached,
    )
    return result.records[-1].iteration if result.stopped_early else cap


@dataclass
class ExperimentResult:
    name: str
    baseline_label: str
    treatment_label: str
    baseline: list = field(default_factory=list)
    treatment: list = field(default_factory=list)
    required_ratio: float = 1.0

    @property
    def baseline_median(self):
        return statistics.median(self.baseline)

    @property
    def treatment_median(self):
        return statistics.median(self.treatment)

    @property
    def ratio(self):
        return self.treatment_median / self.baseline_median

    @property
    def passed(self):
        return self.ratio <= self.required_ratio

    def render(self):
        return "\n".join(
            [
                f"experiment={self.name}",
                f"{self.baseline_label}_iterations={self.baseline}",
                f"{self.treatment_label}_iterations={self.treatment}",
                f"{self.baseline_label}_median={self.baseline_median}",
                f"{self.treatment_label}_median={self.treatment_median}",
                f"ratio={self.ratio:.3f}",
                f"required_ratio={self.required_ratio}",
                f"passed={self.passed}",
            ]
        )


def preprocessing_experiment(seeds=3, cap=3000, n_utterances=20, pad_sec=1.5):
    """Iterations to diagonal alignments for silence-padded vs trimmed inputs."""
    result = ExperimentResult("preprocessing", "padded", "trimmed", required_ratio=0.6)
    for seed in range(seeds):
        padded, table = synthetic_corpus(DEVANAGARI_SYMBOLS, n_utterances, seed, pad_sec=pad_sec)
        trimmed, _ = synthetic_corpus(DEVANAGARI_SYMBOLS, n_utterances, seed, pad_sec=pad_sec, trim=True)
        result.baseline.append(iterations_to_diagonality(padded, table, seed, cap))
        result.treatment.append(iterations_to_diagonality(trimmed, table, seed, cap))
        logger.info("seed %d: padded %d trimmed %d", seed, result.baseline[-1], result.treatment[-1])
    return result


def pretrain_checkpoint(seed, iterations, n_utterances=20, lr=2e-3):
    """Toy model trained on the Latin-alphabet corpus, as a checkpoint with optimizer state."""
    items, table = synthetic_corpus(LATIN_SYMBOLS, n_utterances, seed + 1000)
    result = fit(
        InMemoryDataset(items), table, toy_model_config(len(table)),
        train_cfg=toy_train_config(seed, iterations), adam_cfg=AdamConfig(lr=lr),
    )
    return result.checkpoint


def transfer_experiment(seeds=3, cap=3000, tau_iteration=1000, pretrain_iterations=1000,
                        n_utterances=20, window=10):
    """Iterations to reach the cold-start loss at ``tau_iteration``, warm vs cold."""
    result = ExperimentResult("transfer", "cold", "warm", required_ratio=0.5)
    for seed in range(seeds):
        items, table = synthetic_corpus(DEVANAGARI_SYMBOLS, n_utterances, seed)
        cold = fit(
            InMemoryDataset(items), table, toy_model_config(len(table)),
            train_cfg=toy_train_config(seed, tau_iteration), adam_cfg=AdamConfig(lr=2e-3),
        )
        tau = smoothed(cold.records, window)[-1]
        source = pretrain_checkpoint(seed, pretrain_iterations, n_utterances)
        cold_iters = first_reaching(cold.records, tau, window)
        warm_iters = iterations_to_loss(
            items, table, seed, cap, tau, warm_start=source, window=window
        )
        result.baseline.append(cold_iters)
        result.treatment.append(warm_iters)
        logger.info("seed %d: tau %.5f cold %d warm %d", seed, tau, cold_iters, warm_iters)
    return result


def run_experiment(name, seeds=3, cap=3000):
    if name == "preprocessing":
        return preprocessing_experiment(seeds=seeds, cap=cap)
    if name == "transfer":
        return transfer_experiment(seeds=seeds, cap=cap, tau_iteration=min(1000, cap))
    raise ValueError(f"unknown experiment '{name}'")
