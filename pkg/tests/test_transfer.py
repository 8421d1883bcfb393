"""
Tests for transfer-learning surgery and the compatibility report.
"""

import dataclasses
import os
import sys

import pytest
import torch

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.checkpoint import OPTIMIZER_PREFIX, Checkpoint
from lowres_tts.config import ConfigError
from lowres_tts.model import MissingTensor, TacoModel
from lowres_tts.text import SymbolTable
from lowres_tts.trainer import OptimizerState
from lowres_tts.transfer import (
    COPY,
    DROP,
    EMBEDDING_NAME,
    REINIT,
    IncompatibleArchitecture,
    TransferSpec,
    compat_report,
    surgery,
)

SOURCE_TABLE = SymbolTable(list("abcdefghijklmnop"))


@pytest.fixture
def source(toy_config):
    """A pretrained-style checkpoint over a Latin alphabet, optimizer state included."""
    cfg = toy_config(len(SOURCE_TABLE))
    params = TacoModel(cfg, seed=1).parameters_map()
    state = OptimizerState.fresh(params)
    state = OptimizerState(
        step=50,
        exp_avg={n: t + 0.5 for n, t in state.exp_avg.items()},
        exp_avg_sq={n: t + 0.25 for n, t in state.exp_avg_sq.items()},
    )
    return Checkpoint.build(cfg, SOURCE_TABLE, params, iteration=50, seed=1, optimizer=state)


@pytest.fixture
def target(toy_corpus, toy_config):
    _, table = toy_corpus
    return table, toy_config(len(table))


def test_surgery_reinitializes_embedding(source, target):
    """The embedding takes the target shape; everything else is copied bitwise."""
    table, cfg = target
    params = surgery(source, table, TransferSpec(), cfg)
    embedding = params[EMBEDDING_NAME]
    assert embedding.shape == (len(table), cfg.embed_dim)
    assert embedding.dtype == torch.float64
    assert float(embedding.abs().max()) <= 0.1
    for name, value in params.items():
        if name != EMBEDDING_NAME:
            assert torch.equal(value, source.tensors[name]), name
    assert not any(name.startswith(OPTIMIZER_PREFIX) for name in params)


def test_surgery_output_loads_into_model(source, target):
    """The result satisfies the target model and starts fresh optimizer moments."""
    table, cfg = target
    params = surgery(source, table, TransferSpec(), cfg)
    model = TacoModel.from_parameters(params, cfg)
    state = OptimizerState.fresh(model.parameters_map())
    assert state.step == 0
    assert all(not torch.any(t) for t in state.exp_avg.values())
    assert all(not torch.any(t) for t in state.exp_avg_sq.values())


def test_embedding_reset_even_for_same_vocab(source, toy_config):
    """Exclusion does not depend on the vocabulary changing."""
    params = surgery(source, SOURCE_TABLE, TransferSpec(), toy_config(len(SOURCE_TABLE)))
    assert not torch.equal(params[EMBEDDING_NAME], source.tensors[EMBEDDING_NAME])


def test_embedding_init_is_seeded(source, target):
    """Same seed, same embedding; another seed differs."""
    table, cfg = target
    a = surgery(source, table, TransferSpec(seed=3), cfg)[EMBEDDING_NAME]
    b = surgery(source, table, TransferSpec(seed=3), cfg)[EMBEDDING_NAME]
    c = surgery(source, table, TransferSpec(seed=4), cfg)[EMBEDDING_NAME]
    assert torch.equal(a, b)
    assert not torch.equal(a, c)


def test_surgery_is_idempotent(source, target):
    """Feeding the output back through surgery copies every retained tensor again."""
    table, cfg = target
    first = surgery(source, table, TransferSpec(), cfg)
    again = surgery(Checkpoint.build(cfg, table, first), table, TransferSpec(seed=7), cfg)
    for name, value in first.items():
        if name != EMBEDDING_NAME:
            assert torch.equal(again[name], value), name


def test_extra_prefix_resets_postnet(source, target):
    """Excluding "postnet." gives those tensors a fresh initialization."""
    table, cfg = target
    spec = TransferSpec(exclude_name_prefixes=("embedding.", "optimizer.", "postnet."))
    params = surgery(source, table, spec, cfg)
    postnet = [name for name in params if name.startswith("postnet.")]
    assert postnet
    assert any(not torch.equal(params[name], source.tensors[name]) for name in postnet)
    assert torch.equal(params["decoder.gate.weight"], source.tensors["decoder.gate.weight"])


def test_architecture_mismatch(source, target):
    """A different embedding width lists the differing field."""
    table, cfg = target
    with pytest.raises(IncompatibleArchitecture) as info:
        surgery(source, table, TransferSpec(), dataclasses.replace(cfg, embed_dim=48))
    assert info.value.fields == ["embed_dim"]
    assert info.value.code == "E_INCOMPATIBLE_ARCHITECTURE"


def test_dtype_mismatch(source, target):
    """Precision is part of the architecture."""
    table, cfg = target
    with pytest.raises(IncompatibleArchitecture):
        surgery(source, table, TransferSpec(), dataclasses.replace(cfg, dtype="float32"))


def test_dropout_difference_is_allowed(source, target):
    """Regularization settings do not block transfer."""
    table, cfg = target
    params = surgery(source, table, TransferSpec(), dataclasses.replace(cfg, decoder_dropout=0.1))
    assert EMBEDDING_NAME in params


def test_vocab_table_must_match_config(source, target):
    """A symbol table that does not fill vocab_size is refused."""
    table, cfg = target
    with pytest.raises(IncompatibleArchitecture):
        surgery(source, SOURCE_TABLE, TransferSpec(), cfg)


def test_missing_tensor(source, target):
    """A source without the gate weight raises MissingTensor."""
    table, cfg = target
    del source.tensors["decoder.gate.weight"]
    with pytest.raises(MissingTensor) as info:
        surgery(source, table, TransferSpec(), cfg)
    assert info.value.name == "decoder.gate.weight"


def test_spec_validation():
    """Prefixes must be non-empty and the range positive."""
    with pytest.raises(ConfigError):
        TransferSpec(exclude_name_prefixes=("",))
    with pytest.raises(ConfigError):
        TransferSpec(half_range=0.0)


def test_report_default_decisions(source, target):
    """Only the embedding is REINIT and only optimizer tensors are DROP."""
    table, cfg = target
    report = compat_report(source, cfg, TransferSpec(), table)
    assert report.compatible
    reinit = [d.name for d in report.decisions if d.action == REINIT]
    dropped = [d.name for d in report.decisions if d.action == DROP]
    assert reinit == [EMBEDDING_NAME]
    assert dropped and all(name.startswith(OPTIMIZER_PREFIX) for name in dropped)
    assert all(d.action == COPY for d in report.decisions if d.name not in reinit + dropped)
    text = report.render()
    assert "REINIT" in text and "MISMATCH" not in text


def test_report_extra_prefix(source, target):
    """Postnet rows turn into REINIT under an extra prefix."""
    table, cfg = target
    spec = TransferSpec(exclude_name_prefixes=("embedding.", "optimizer.", "postnet."))
    report = compat_report(source, cfg, spec, table)
    postnet = [d for d in report.decisions if d.name.startswith("postnet.")]
    assert postnet and all(d.action == REINIT for d in postnet)


def test_report_flags_instead_of_raising(source, target):
    """Incompatible dimensions show up as mismatches."""
    table, cfg = target
    report = compat_report(source, dataclasses.replace(cfg, decoder_rnn_dim=32), TransferSpec(), table)
    assert not report.compatible
    assert report.config_diffs == ["decoder_rnn_dim"]
    assert any(d.mismatch for d in report.decisions)
    text = report.render()
    assert "MISMATCH" in text
    assert "CONFIG  decoder_rnn_dim differs" in text
