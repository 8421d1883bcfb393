"""
Checkpoint module for the lowres-tts toolkit.
Reads and writes the LRTT named-tensor container.
"""

import os
import json
import struct
import logging
from dataclasses import dataclass

import numpy as np
import torch

from lowres_tts.errors import TTSError
from lowres_tts.integrity import sha256_bytes
from lowres_tts.model import ModelConfig
from lowres_tts.text import SymbolTable

logger = logging.getLogger(__name__)

MAGIC = b"LRTT"
FORMAT_VERSION = 1
SUPPORTED_VERSIONS = (1,)
OPTIMIZER_PREFIX = "optimizer."

_PREAMBLE = struct.Struct("<4sIQ")
_DTYPE_CODES = {torch.float32: ("f32", "<f4"), torch.float64: ("f64", "<f8")}
_CODE_DTYPES = {"f32": (torch.float32, "<f4"), "f64": (torch.float64, "<f8")}


@dataclass
class Checkpoint:
    """Model parameters, optional optimizer moments and run metadata.

    ``meta`` holds ``model_cfg`` (dict), ``vocab`` (symbol list), ``iteration``,
    ``seed`` and ``optimizer_step``. Optimizer tensors are named
    ``optimizer.exp_avg.<param>`` and ``optimizer.exp_avg_sq.<param>``.
    """

    meta: dict
    tensors: dict
    format_version: int = FORMAT_VERSION

    @classmethod
    def build(cls, model_cfg, symbols, params, iteration=0, seed=0, optimizer=None):
        tensors = {name: value.detach().clone() for name, value in params.items()}
        meta = {
            "model_cfg": model_cfg.to_dict(),
            "vocab": list(symbols.symbols),
            "iteration": int(iteration),
            "seed": int(seed),
            "optimizer_step": 0,
        }
        if optimizer is not None:
            meta["optimizer_step"] = int(optimizer.step)
            for name, value in optimizer.exp_avg.items():
                tensors[f"{OPTIMIZER_PREFIX}exp_avg.{name}"] = value.detach().clone()
            for name, value in optimizer.exp_avg_sq.items():
                tensors[f"{OPTIMIZER_PREFIX}exp_avg_sq.{name}"] = value.detach().clone()
        return cls(meta=meta, tensors=tensors)

    @property
    def model_config(self):
        return ModelConfig.from_dict(self.meta["model_cfg"])

    @property
    def symbol_table(self):
        return SymbolTable(self.meta["vocab"])

    @property
    def iteration(self):
        return int(self.meta.get("iteration", 0))

    def parameters(self):
        return {n: t for n, t in self.tensors.items() if not n.startswith(OPTIMIZER_PREFIX)}

    def optimizer_tensors(self):
        """Return ``(step, exp_avg, exp_avg_sq)`` keyed by parameter name."""
        exp_avg, exp_avg_sq = {}, {}
        for name, value in self.tensors.items():
            if name.startswith(OPTIMIZER_PREFIX + "exp_avg_sq."):
                exp_avg_sq[name[len(OPTIMIZER_PREFIX + "exp_avg_sq."):]] = value
            elif name.startswith(OPTIMIZER_PREFIX + "exp_avg."):
                exp_avg[name[len(OPTIMIZER_PREFIX + "exp_avg."):]] = value
        return int(self.meta.get("optimizer_step", 0)), exp_avg, exp_avg_sq

    def has_optimizer_state(self):
        return any(name.startswith(OPTIMIZER_PREFIX) for name in self.tensors)


def _encode_tensor(value):
    value = value.detach().cpu()
    if value.dtype not in _DTYPE_CODES:
        raise TypeError(f"unsupported tensor dtype {value.dtype}")
    code, np_dtype = _DTYPE_CODES[value.dtype]
    return code, np.ascontiguousarray(value.numpy(), dtype=np_dtype).tobytes()


def _format_shape(shape):
    return "x".join(str(dim) for dim in shape) if shape else "scalar"


def _parse_shape(text):
    return () if text == "scalar" else tuple(int(dim) for dim in text.split("x"))


def save_checkpoint(ckpt, path):
    """Write a checkpoint; the file is replaced atomically.

    Tensors keep their own precision: float32 is stored as ``f32`` and float64
    as ``f64``, so a float64 model reloads bit-for-bit. The meta block always
    carries ``payload_sha256``; ``load_checkpoint`` refuses files without it.
    """
    names = list(ckpt.tensors)
    if len(set(names)) != len(names):
        raise CorruptCheckpoint("duplicate tensor names")

    directory, chunks, offset = [], [], 0
    for name in names:
        if any(ch.isspace() for ch in name):
            raise CorruptCheckpoint(f"tensor name {name!r} contains whitespace")
        code, raw = _encode_tensor(ckpt.tensors[name])
        directory.append(f"tensor: {name} {code} {_format_shape(tuple(ckpt.tensors[name].shape))} {offset}")
        chunks.append(raw)
        offset += len(raw)
    payload = b"".join(chunks)

    meta = dict(ckpt.meta)
    meta["payload_sha256"] = sha256_bytes(payload)
    lines = [f"{key}: {json.dumps(value, ensure_ascii=False, sort_keys=True)}" for key, value in meta.items()]
    meta_block = "\n".join(lines + directory).encode("utf-8")

    tmp_path = f"{path}.tmp"
    with open(tmp_path, "wb") as handle:
        handle.write(_PREAMBLE.pack(MAGIC, ckpt.format_version, len(meta_block)))
        handle.write(meta_block)
        handle.write(payload)
    os.replace(tmp_path, path)
    logger.info("Saved checkpoint with %d tensors to %s", len(names), path)


def _parse_meta(block):
    meta, directory = {}, []
    for line in block.split("\n"):
        if not line:
            continue
        key, sep, value = line.partition(": ")
        if not sep:
            raise CorruptCheckpoint(f"malformed meta line {line!r}")
        if key == "tensor":
            try:
                name, code, shape, offset = value.split(" ")
                directory.append((name, code, _parse_shape(shape), int(offset)))
            except ValueError as e:
                raise CorruptCheckpoint(f"malformed tensor entry {value!r}") from e
            continue
        try:
            meta[key] = json.loads(value)
        except json.JSONDecodeError as e:
            raise CorruptCheckpoint(f"malformed meta value for '{key}'") from e
    return meta, directory


def load_checkpoint(path):
    """Read a checkpoint and verify its payload digest."""
    try:
        with open(path, "rb") as handle:
            data = handle.read()
    except OSError as e:
        raise CorruptCheckpoint(f"cannot read {path}: {e}") from e

    if len(data) < _PREAMBLE.size:
        raise CorruptCheckpoint(f"{path}: truncated header")
    magic, version, meta_length = _PREAMBLE.unpack_from(data)
    if magic != MAGIC:
        raise CorruptCheckpoint(f"{path}: bad magic {magic!r}")
    if version not in SUPPORTED_VERSIONS:
        raise VersionMismatch(f"{path}: format version {version}, supported {list(SUPPORTED_VERSIONS)}")

    start = _PREAMBLE.size
    if len(data) < start + meta_length:
        raise CorruptCheckpoint(f"{path}: truncated meta block")
    try:
        meta, directory = _parse_meta(data[start:start + meta_length].decode("utf-8"))
    except UnicodeDecodeError as e:
        raise CorruptCheckpoint(f"{path}: meta block is not UTF-8") from e
    payload = data[start + meta_length:]

    expected = meta.pop("payload_sha256", None)
    if expected is None or sha256_bytes(payload) != expected:
        raise CorruptCheckpoint(f"{path}: payload digest mismatch")

    tensors = {}
    for name, code, shape, offset in directory:
        if name in tensors:
            raise CorruptCheckpoint(f"{path}: duplicate tensor '{name}'")
        if code not in _CODE_DTYPES:
            raise CorruptCheckpoint(f"{path}: unknown dtype '{code}' for '{name}'")
        torch_dtype, np_dtype = _CODE_DTYPES[code]
        count = int(np.prod(shape, dtype=np.int64)) if shape else 1
        size = count * np.dtype(np_dtype).itemsize
        if offset + size > len(payload):
            raise CorruptCheckpoint(f"{path}: tensor '{name}' runs past the payload")
        values = np.frombuffer(payload, dtype=np_dtype, count=count, offset=offset).reshape(shape)
        tensors[name] = torch.from_numpy(values.astype(np_dtype[1:], copy=True)).to(torch_dtype)

    logger.info("Loaded checkpoint with %d tensors from %s", len(tensors), path)
    return Checkpoint(meta=meta, tensors=tensors, format_version=version)


class CorruptCheckpoint(TTSError):
    """Raised when a checkpoint file is truncated, malformed or fails its digest."""

    code = "E_CORRUPT_CHECKPOINT"


class VersionMismatch(TTSError):
    """Raised when a checkpoint uses an unsupported format version."""

    code = "E_VERSION_MISMATCH"
