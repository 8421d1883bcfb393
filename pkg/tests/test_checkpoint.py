"""
Tests for checkpoint serialization.
"""

import os
import struct
import sys

import pytest
import torch

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.checkpoint import (
    MAGIC,
    Checkpoint,
    CorruptCheckpoint,
    VersionMismatch,
    load_checkpoint,
    save_checkpoint,
)
from lowres_tts.model import TacoModel
from lowres_tts.trainer import OptimizerState


@pytest.fixture
def saved(toy_corpus, toy_config, tmp_path):
    """A toy checkpoint with random optimizer moments, saved to disk."""
    _, table = toy_corpus
    cfg = toy_config(len(table))
    params = TacoModel(cfg, seed=4).parameters_map()
    generator = torch.Generator().manual_seed(9)
    state = OptimizerState(
        step=17,
        exp_avg={n: torch.randn(p.shape, generator=generator, dtype=p.dtype) for n, p in params.items()},
        exp_avg_sq={n: torch.rand(p.shape, generator=generator, dtype=p.dtype) for n, p in params.items()},
    )
    ckpt = Checkpoint.build(cfg, table, params, iteration=17, seed=4, optimizer=state)
    path = tmp_path / "model.lrtt"
    save_checkpoint(ckpt, path)
    return ckpt, path


def test_round_trip_is_bitwise(saved):
    """Every tensor and the metadata come back exactly."""
    ckpt, path = saved
    back = load_checkpoint(path)
    assert back.meta == ckpt.meta
    assert set(back.tensors) == set(ckpt.tensors)
    for name, value in ckpt.tensors.items():
        assert back.tensors[name].dtype == value.dtype
        assert torch.equal(back.tensors[name], value), name
    assert back.model_config == ckpt.model_config
    assert back.symbol_table == ckpt.symbol_table


def test_optimizer_state_survives(saved):
    """Moments and step restore into an optimizer state."""
    ckpt, path = saved
    state = OptimizerState.from_checkpoint(load_checkpoint(path))
    assert state.step == 17
    assert set(state.exp_avg) == set(ckpt.parameters())
    assert load_checkpoint(path).has_optimizer_state()


def test_float32_and_scalar_tensors(toy_corpus, toy_config, tmp_path):
    """Single precision and zero-dimensional tensors keep dtype and shape."""
    _, table = toy_corpus
    tensors = {"a": torch.tensor(1.5, dtype=torch.float32), "b": torch.arange(6, dtype=torch.float32).reshape(2, 3)}
    ckpt = Checkpoint.build(toy_config(len(table)), table, tensors)
    save_checkpoint(ckpt, tmp_path / "x.lrtt")
    back = load_checkpoint(tmp_path / "x.lrtt")
    assert back.tensors["a"].shape == ()
    assert back.tensors["b"].dtype == torch.float32
    assert torch.equal(back.tensors["b"], tensors["b"])


def test_header_layout(saved):
    """The file starts with the magic and version 1."""
    _, path = saved
    magic, version, _ = struct.unpack_from("<4sIQ", path.read_bytes())
    assert magic == MAGIC
    assert version == 1


def test_truncated_file(saved):
    """A short file fails the digest or header checks."""
    _, path = saved
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)
    path.write_bytes(data[:6])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_flipped_payload_byte(saved):
    """Any change in the tensor bytes is caught by the digest."""
    _, path = saved
    data = bytearray(path.read_bytes())
    data[-1] ^= 0xFF
    path.write_bytes(bytes(data))
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_bad_magic(saved):
    """Foreign files are rejected."""
    _, path = saved
    path.write_bytes(b"RIFF" + path.read_bytes()[4:])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)


def test_unknown_version(saved):
    """Version 999 raises VersionMismatch."""
    _, path = saved
    data = bytearray(path.read_bytes())
    data[4:8] = struct.pack("<I", 999)
    path.write_bytes(bytes(data))
    with pytest.raises(VersionMismatch):
        load_checkpoint(path)


def test_missing_file(tmp_path):
    """An unreadable path is reported as corrupt."""
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(tmp_path / "nope.lrtt")


def test_directory_records_precision(saved):
    """float64 tensors are listed as f64 in the tensor directory."""
    _, path = saved
    data = path.read_bytes()
    _, _, length = struct.unpack_from("<4sIQ", data)
    block = data[16:16 + length].decode("utf-8")
    entries = [line.split(" ") for line in block.split("\n") if line.startswith("tensor: ")]
    assert entries
    assert {fields[2] for fields in entries} == {"f64"}


def test_missing_digest_is_refused(saved):
    """A meta block without payload_sha256 is treated as corrupt."""
    _, path = saved
    data = path.read_bytes()
    _, version, length = struct.unpack_from("<4sIQ", data)
    lines = data[16:16 + length].decode("utf-8").split("\n")
    block = "\n".join(line for line in lines if not line.startswith("payload_sha256: ")).encode("utf-8")
    path.write_bytes(struct.pack("<4sIQ", MAGIC, version, len(block)) + block + data[16 + length:])
    with pytest.raises(CorruptCheckpoint):
        load_checkpoint(path)
