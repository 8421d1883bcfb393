"""
Transfer module for the lowres-tts toolkit.
Warm-starts a model for a new symbol set from a pretrained checkpoint:
text embeddings and optimizer state are left out, everything else is copied.
"""

import logging
from dataclasses import dataclass

import torch

from lowres_tts.checkpoint import OPTIMIZER_PREFIX
from lowres_tts.config import ConfigError
from lowres_tts.errors import TTSError
from lowres_tts.model import MissingTensor, TacoModel

logger = logging.getLogger(__name__)

EMBEDDING_NAME = "embedding.weight"

COPY = "COPY"
REINIT = "REINIT"
DROP = "DROP"


@dataclass(frozen=True)
class TransferSpec:
    exclude_name_prefixes: tuple = ("embedding.", "optimizer.")
    half_range: float = 0.1
    seed: int = 0

    def __post_init__(self):
        prefixes = tuple(self.exclude_name_prefixes)
        if any(not isinstance(p, str) or not p for p in prefixes):
            raise ConfigError("transfer: exclude prefixes must be non-empty strings")
        if not self.half_range > 0:
            raise ConfigError("transfer: half_range must be positive")
        object.__setattr__(self, "exclude_name_prefixes", prefixes)

    def excludes(self, name):
        return any(name.startswith(prefix) for prefix in self.exclude_name_prefixes)


@dataclass(frozen=True)
class TensorDecision:
    name: str
    action: str
    source_shape: tuple
    target_shape: tuple
    mismatch: bool = False


@dataclass
class CompatReport:
    decisions: list
    config_diffs: list
    vocab_ok: bool

    @property
    def compatible(self):
        return self.vocab_ok and not self.config_diffs and not any(d.mismatch for d in self.decisions)

    def render(self):
        lines = []
        for d in self.decisions:
            flag = "  MISMATCH" if d.mismatch else ""
            src = "x".join(map(str, d.source_shape)) if d.source_shape else "-"
            dst = "x".join(map(str, d.target_shape)) if d.target_shape else "-"
            lines.append(f"{d.action:<7}{d.name:<44}{src:>14} -> {dst}{flag}")
        for field_name in self.config_diffs:
            lines.append(f"CONFIG  {field_name} differs")
        if not self.vocab_ok:
            lines.append("VOCAB   symbol table size does not match model vocab_size")
        return "\n".join(lines)


def _embedding_init(shape, spec, dtype):
    generator = torch.Generator().manual_seed(spec.seed)
    values = torch.rand(shape, generator=generator, dtype=torch.float64)
    return ((values * 2.0 - 1.0) * spec.half_range).to(dtype)


def _fresh_tensors(target_cfg, spec):
    return TacoModel(target_cfg, seed=spec.seed).parameters_map()


def surgery(src, target_vocab, spec, target_cfg):
    """Parameters for ``target_cfg`` warm-started from checkpoint ``src``.

    Tensors matching no exclude prefix are copied verbatim; ``embedding.weight``
    is drawn from a seeded uniform(-half_range, half_range); other excluded model
    tensors get a fresh seeded default initialization. Optimizer tensors never
    appear in the output.
    """
    src_cfg = src.model_config
    diffs = src_cfg.architecture_diff(target_cfg)
    if src_cfg.dtype != target_cfg.dtype:
        diffs.append("dtype")
    if diffs:
        raise IncompatibleArchitecture(diffs)
    if len(target_vocab) != target_cfg.vocab_size:
        raise IncompatibleArchitecture(
            ["vocab_size"],
            detail=f"symbol table has {len(target_vocab)} ids, config says {target_cfg.vocab_size}",
        )

    expected = TacoModel(target_cfg).parameter_shapes()
    fresh = None
    params = {}
    for name, shape in expected.items():
        if name == EMBEDDING_NAME:
            params[name] = _embedding_init(shape, spec, target_cfg.torch_dtype)
            continue
        if spec.excludes(name):
            if fresh is None:
                fresh = _fresh_tensors(target_cfg, spec)
            params[name] = fresh[name]
            continue
        if name not in src.tensors:
            raise MissingTensor(name)
        value = src.tensors[name]
        if tuple(value.shape) != shape:
            raise IncompatibleArchitecture([name], detail=f"shape {tuple(value.shape)} != {shape}")
        params[name] = value.detach().clone()

    copied = sum(1 for name in params if not spec.excludes(name) and name != EMBEDDING_NAME)
    dropped = sum(1 for name in src.tensors if name.startswith(OPTIMIZER_PREFIX))
    logger.info(
        "Surgery copied %d tensors, re-initialized %d, dropped %d optimizer tensors",
        copied, len(params) - copied, dropped,
    )
    return params


def compat_report(src, target_cfg, spec=None, target_vocab=None):
    """Dry run of ``surgery``: a COPY / REINIT / DROP decision per tensor.

    Mismatches are flagged in the report rather than raised.
    """
    spec = spec or TransferSpec()
    src_cfg = src.model_config
    diffs = src_cfg.architecture_diff(target_cfg)
    if src_cfg.dtype != target_cfg.dtype:
        diffs.append("dtype")
    vocab_ok = target_vocab is None or len(target_vocab) == target_cfg.vocab_size

    expected = TacoModel(target_cfg).parameter_shapes()
    decisions = []
    for name, shape in expected.items():
        source = src.tensors.get(name)
        source_shape = tuple(source.shape) if source is not None else ()
        if name == EMBEDDING_NAME or spec.excludes(name):
            decisions.append(TensorDecision(name, REINIT, source_shape, shape))
        elif source is None:
            decisions.append(TensorDecision(name, COPY, (), shape, mismatch=True))
        else:
            decisions.append(TensorDecision(name, COPY, source_shape, shape, mismatch=source_shape != shape))

    for name, value in src.tensors.items():
        if name not in expected:
            decisions.append(TensorDecision(name, DROP, tuple(value.shape), ()))
    return CompatReport(decisions, diffs, vocab_ok)


class IncompatibleArchitecture(TTSError):
    """Raised when a source checkpoint differs from the target in more than vocab size."""

    code = "E_INCOMPATIBLE_ARCHITECTURE"

    def __init__(self, fields, detail=None):
        self.fields = list(fields)
        message = "architecture differs in: " + ", ".join(self.fields)
        if detail:
            message += f" ({detail})"
        super().__init__(message)
