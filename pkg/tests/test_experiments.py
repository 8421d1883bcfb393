"""
Tests for the synthetic corpora and convergence comparisons.
"""

import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.experiments import (
    DEVANAGARI_SYMBOLS,
    TOY_FEATURES,
    ExperimentResult,
    first_reaching,
    mean_diagonality,
    preprocessing_experiment,
    render_utterance,
    run_experiment,
    smoothed,
    symbol_tone,
    synthetic_corpus,
    toy_model_config,
    transfer_experiment,
)
from lowres_tts.model import TacoModel
from lowres_tts.trainer import LossRecord


def test_symbol_tones_span_the_band():
    """Tones rise with the symbol index and stay under fmax."""
    tones = [symbol_tone(i, 8, TOY_FEATURES) for i in range(8)]
    assert tones[0] == 300.0
    assert np.all(np.diff(tones) > 0)
    assert tones[-1] < TOY_FEATURES.fmax_hz


def test_rendered_length():
    """Each symbol lasts frames_per_symbol hops; padding adds on both ends."""
    clip = render_utterance("कख", DEVANAGARI_SYMBOLS, TOY_FEATURES, frames_per_symbol=4, pad_sec=0.5)
    assert len(clip) == 2 * 4 * TOY_FEATURES.hop + 2 * 4000


def test_synthetic_corpus_is_seeded(toy_corpus):
    """Same seed, same utterances; every sequence ends in EOS."""
    items, table = toy_corpus
    again, _ = synthetic_corpus("कखगघ", 5, seed=3)
    assert [ids for _, ids, _ in items] == [ids for _, ids, _ in again]
    assert all(ids[-1] == table.eos_id for _, ids, _ in items)
    assert all(mel.shape[1] == TOY_FEATURES.n_mels for _, _, mel in items)


def test_trimmed_corpus_drops_the_padding():
    """Trimming padded renders brings them back to about the unpadded length."""
    plain, _ = synthetic_corpus("कखगघ", 3, seed=4)
    padded, _ = synthetic_corpus("कखगघ", 3, seed=4, pad_sec=0.5)
    trimmed, _ = synthetic_corpus("कखगघ", 3, seed=4, pad_sec=0.5, trim=True)
    for (_, ids, short), (_, _, long), (_, same_ids, cut) in zip(plain, padded, trimmed):
        assert same_ids == ids
        assert long.shape[0] - cut.shape[0] > 100
        assert cut.shape[0] <= short.shape[0] + 1


def test_mean_diagonality_is_a_fraction(toy_corpus):
    """An untrained model scores somewhere in [0, 1]."""
    items, table = toy_corpus
    model = TacoModel(toy_model_config(len(table)), seed=0)
    assert 0.0 <= mean_diagonality(model, items[:2]) <= 1.0


def test_smoothed_and_first_reaching():
    """Trailing means start counting once the window is full."""
    records = [LossRecord(i + 1, loss, None, 1e-3) for i, loss in enumerate([4.0, 2.0, 2.0, 0.0, 0.0])]
    assert smoothed(records, window=2) == [4.0, 3.0, 2.0, 1.0, 0.0]
    assert first_reaching(records, 1.0, window=2) == 4
    assert first_reaching(records, -1.0, window=2) == 5


def test_result_summary():
    """Medians, ratio and the pass flag."""
    result = ExperimentResult("transfer", "cold", "warm", [900, 1000, 1100], [300, 400, 800], required_ratio=0.5)
    assert result.ratio == pytest.approx(0.4)
    assert result.passed
    text = result.render()
    assert "cold_median=1000" in text
    assert "passed=True" in text


def test_unknown_experiment():
    """Only the two comparisons exist."""
    with pytest.raises(ValueError):
        run_experiment("vocoder")


@pytest.mark.slow
def test_trimming_speeds_up_alignment():
    """Trimmed inputs reach diagonal alignments in at most 60% of the padded iterations."""
    result = preprocessing_experiment(seeds=3, cap=3000)
    assert result.passed, result.render()


@pytest.mark.slow
def test_warm_start_speeds_up_training():
    """A transferred model reaches the cold-start loss in at most half the iterations."""
    result = transfer_experiment(seeds=3, cap=3000)
    assert result.passed, result.render()
