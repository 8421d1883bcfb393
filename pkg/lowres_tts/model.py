"""
Spectrogram prediction model for the lowres-tts toolkit.
Character encoder, location-sensitive attention, autoregressive decoder with
a stop gate, and a convolutional postnet.
"""

import enum
import math
import logging
import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from torch import Tensor, nn
from torch.nn import functional as F

from lowres_tts.config import ConfigError
from lowres_tts.errors import TTSError
from lowres_tts.text import UnknownSymbol

logger = logging.getLogger(__name__)

_DTYPES = {"float32": torch.float32, "float64": torch.float64}

# Fields that decide tensor names and shapes
ARCHITECTURE_FIELDS = (
    "embed_dim",
    "encoder_conv_layers",
    "kernel",
    "encoder_rnn_dim",
    "attention_dim",
    "location_filters",
    "location_kernel",
    "attention_rnn_dim",
    "decoder_rnn_dim",
    "prenet_dim",
    "n_mels",
    "postnet_layers",
    "postnet_kernel",
    "postnet_dim",
)


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    embed_dim: int = 64
    encoder_conv_layers: int = 3
    kernel: int = 5
    encoder_rnn_dim: int = 64
    attention_dim: int = 32
    location_filters: int = 8
    location_kernel: int = 15
    attention_rnn_dim: int = 128
    decoder_rnn_dim: int = 128
    prenet_dim: int = 64
    n_mels: int = 80
    postnet_layers: int = 5
    postnet_kernel: int = 5
    postnet_dim: int = 64
    gate_threshold: float = 0.4
    encoder_dropout: float = 0.5
    decoder_dropout: float = 0.4
    attention_dropout: float = 0.4
    postnet_dropout: float = 0.5
    max_decoder_steps: int = 1000
    dtype: str = "float64"

    def __post_init__(self):
        if self.vocab_size < 3:
            raise ConfigError("model: vocab_size must cover padding, EOS and one symbol")
        for name in ARCHITECTURE_FIELDS + ("max_decoder_steps",):
            if getattr(self, name) < 1:
                raise ConfigError(f"model: {name} must be >= 1")
        for name in ("kernel", "location_kernel", "postnet_kernel"):
            if getattr(self, name) % 2 == 0:
                raise ConfigError(f"model: {name} must be odd")
        if not 0 < self.gate_threshold < 1:
            raise ConfigError("model: gate_threshold must lie in (0, 1)")
        for name in ("encoder_dropout", "decoder_dropout", "attention_dropout", "postnet_dropout"):
            if not 0 <= getattr(self, name) < 1:
                raise ConfigError(f"model: {name} must lie in [0, 1)")
        if self.dtype not in _DTYPES:
            raise ConfigError(f"model: dtype must be one of {sorted(_DTYPES)}")

    @property
    def memory_dim(self):
        return 2 * self.encoder_rnn_dim

    @property
    def torch_dtype(self):
        return _DTYPES[self.dtype]

    @property
    def gate_logit_threshold(self):
        """``sigmoid(g) >= threshold`` is evaluated as ``g >= logit(threshold)``."""
        return math.log(self.gate_threshold / (1.0 - self.gate_threshold))

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"model: unknown fields {sorted(unknown)}")
        return cls(**values)

    def architecture_diff(self, other):
        """Names of shape-defining fields that differ from ``other``."""
        return [name for name in ARCHITECTURE_FIELDS if getattr(self, name) != getattr(other, name)]


class DropoutSource:
    """Draws dropout masks from an optional seeded generator.

    Masks are only drawn when ``active`` (train mode) or when a layer asks to
    be forced on, which the prenet does at inference.
    """

    def __init__(self, active, generator=None):
        self.active = active
        self.generator = generator

    def __call__(self, x, p, force=False):
        if p <= 0 or not (self.active or force):
            return x
        keep = torch.rand(x.shape, generator=self.generator, dtype=x.dtype, device=x.device) >= p
        return x * keep / (1.0 - p)


class Encoder(nn.Module):
    """Conv stack (tanh) followed by a bidirectional LSTM."""

    def __init__(self, cfg):
        super().__init__()
        self.dropout_p = cfg.encoder_dropout
        self.convs = nn.ModuleList(
            [
                nn.Conv1d(cfg.embed_dim, cfg.embed_dim, cfg.kernel, padding=cfg.kernel // 2)
                for _ in range(cfg.encoder_conv_layers)
            ]
        )
        self.lstm = nn.LSTM(
            cfg.embed_dim, cfg.encoder_rnn_dim, batch_first=True, bidirectional=True
        )

    def forward(self, embedded, lengths, mask, dropout):
        # embedded: (B, N, E); mask: (B, N) True on real symbols
        keep = mask.unsqueeze(1).to(embedded.dtype)
        x = embedded.transpose(1, 2) * keep
        for conv in self.convs:
            x = dropout(torch.tanh(conv(x)), self.dropout_p) * keep
        x = x.transpose(1, 2)

        packed = nn.utils.rnn.pack_padded_sequence(
            x, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        outputs, _ = self.lstm(packed)
        outputs, _ = nn.utils.rnn.pad_packed_sequence(
            outputs, batch_first=True, total_length=embedded.size(1)
        )
        return outputs


class LocationSensitiveAttention(nn.Module):
    r"""Additive attention conditioned on previous and cumulative weights.

    ``e_i = v^T tanh(W q + b + V m_i + U f_i)`` where ``f`` is a convolution
    over the stacked ``[prev_weights; cum_weights]``.
    """

    def __init__(self, cfg):
        super().__init__()
        self.query = nn.Linear(cfg.attention_rnn_dim, cfg.attention_dim, bias=True)
        self.memory = nn.Linear(cfg.memory_dim, cfg.attention_dim, bias=False)
        self.location_conv = nn.Conv1d(
            2, cfg.location_filters, cfg.location_kernel,
            padding=cfg.location_kernel // 2, bias=False,
        )
        self.location_dense = nn.Linear(cfg.location_filters, cfg.attention_dim, bias=False)
        self.v = nn.Linear(cfg.attention_dim, 1, bias=False)

    def process_memory(self, memory):
        return self.memory(memory)

    def energies(self, query, processed_memory, prev_weights, cum_weights):
        features = self.location_conv(torch.stack((prev_weights, cum_weights), dim=1))
        location = self.location_dense(features.transpose(1, 2))
        hidden = torch.tanh(self.query(query).unsqueeze(1) + processed_memory + location)
        return self.v(hidden).squeeze(-1)

    def forward(self, query, memory, processed_memory, prev_weights, cum_weights, mask=None):
        energies = self.energies(query, processed_memory, prev_weights, cum_weights)
        if mask is not None:
            energies = energies.masked_fill(~mask, -float("inf"))
        weights = F.softmax(energies, dim=1)
        context = torch.bmm(weights.unsqueeze(1), memory).squeeze(1)
        return context, weights


class Prenet(nn.Module):
    def __init__(self, cfg):
        super().__init__()
        self.layers = nn.ModuleList(
            [
                nn.Linear(cfg.n_mels, cfg.prenet_dim, bias=False),
                nn.Linear(cfg.prenet_dim, cfg.prenet_dim, bias=False),
            ]
        )

    def forward(self, x, dropout, p, force=False):
        for linear in self.layers:
            x = dropout(F.relu(linear(x)), p, force=force)
        return x


@dataclass
class DecoderState:
    attention_hidden: Tensor
    attention_cell: Tensor
    decoder_hidden: Tensor
    decoder_cell: Tensor
    prev_weights: Tensor
    cum_weights: Tensor
    context: Tensor


class Decoder(nn.Module):
    """One mel frame per step; emits a frame, a gate logit and attention weights."""

    def __init__(self, cfg):
        super().__init__()
        self.cfg = cfg
        self.prenet = Prenet(cfg)
        self.attention_rnn = nn.LSTMCell(cfg.prenet_dim + cfg.memory_dim, cfg.attention_rnn_dim)
        self.attention = LocationSensitiveAttention(cfg)
        self.decoder_rnn = nn.LSTMCell(cfg.attention_rnn_dim + cfg.memory_dim, cfg.decoder_rnn_dim)
        self.projection = nn.Linear(cfg.decoder_rnn_dim + cfg.memory_dim, cfg.n_mels)
        self.gate = nn.Linear(cfg.decoder_rnn_dim + cfg.memory_dim, 1)

    def initial_state(self, memory):
        batch, n_enc, _ = memory.shape
        zeros = lambda *shape: memory.new_zeros(shape)  # noqa: E731
        return DecoderState(
            attention_hidden=zeros(batch, self.cfg.attention_rnn_dim),
            attention_cell=zeros(batch, self.cfg.attention_rnn_dim),
            decoder_hidden=zeros(batch, self.cfg.decoder_rnn_dim),
            decoder_cell=zeros(batch, self.cfg.decoder_rnn_dim),
            prev_weights=zeros(batch, n_enc),
            cum_weights=zeros(batch, n_enc),
            context=zeros(batch, self.cfg.memory_dim),
        )

    def step(self, prenet_out, state, memory, processed_memory, mask, dropout):
        cell_input = dropout(
            torch.cat((prenet_out, state.context), dim=-1), self.cfg.attention_dropout
        )
        attention_hidden, attention_cell = self.attention_rnn(
            cell_input, (state.attention_hidden, state.attention_cell)
        )
        context, weights = self.attention(
            attention_hidden, memory, processed_memory,
            state.prev_weights, state.cum_weights, mask,
        )
        decoder_hidden, decoder_cell = self.decoder_rnn(
            torch.cat((attention_hidden, context), dim=-1),
            (state.decoder_hidden, state.decoder_cell),
        )
        decoder_hidden = dropout(decoder_hidden, self.cfg.decoder_dropout)

        features = torch.cat((decoder_hidden, context), dim=-1)
        frame = self.projection(features)
        gate = self.gate(features).squeeze(-1)
        new_state = DecoderState(
            attention_hidden=attention_hidden,
            attention_cell=attention_cell,
            decoder_hidden=decoder_hidden,
            decoder_cell=decoder_cell,
            prev_weights=weights,
            cum_weights=state.cum_weights + weights,
            context=context,
        )
        return frame, gate, weights, new_state

    def forward(self, memory, mask, targets, dropout):
        """Teacher-forced decoding: step ``t`` consumes ground-truth frame ``t-1``."""
        go = memory.new_zeros(targets.size(0), 1, targets.size(2))
        inputs = torch.cat((go, targets[:, :-1]), dim=1)
        prenet_out = self.prenet(inputs, dropout, self.cfg.decoder_dropout)

        processed_memory = self.attention.process_memory(memory)
        state = self.initial_state(memory)
        frames, gates, alignments = [], [], []
        for t in range(targets.size(1)):
            frame, gate, weights, state = self.step(
                prenet_out[:, t], state, memory, processed_memory, mask, dropout
            )
            frames.append(frame)
            gates.append(gate)
            alignments.append(weights)
        return torch.stack(frames, dim=1), torch.stack(gates, dim=1), torch.stack(alignments, dim=1)


class Postnet(nn.Module):
    """Residual conv stack over the predicted frames; tanh on all but the last layer."""

    def __init__(self, cfg):
        super().__init__()
        self.dropout_p = cfg.postnet_dropout
        channels = [cfg.n_mels] + [cfg.postnet_dim] * (cfg.postnet_layers - 1) + [cfg.n_mels]
        self.convs = nn.ModuleList(
            [
                nn.Conv1d(c_in, c_out, cfg.postnet_kernel, padding=cfg.postnet_kernel // 2)
                for c_in, c_out in zip(channels[:-1], channels[1:])
            ]
        )

    def forward(self, mel, dropout):
        x = mel.transpose(1, 2)
        last = len(self.convs) - 1
        for index, conv in enumerate(self.convs):
            x = conv(x)
            if index < last:
                x = torch.tanh(x)
            x = dropout(x, self.dropout_p)
        return x.transpose(1, 2)


@dataclass
class Batch:
    """Padded model inputs; masks are True on real positions."""

    ids: Tensor
    input_lengths: Tensor
    mels: Tensor
    output_lengths: Tensor
    utterance_ids: tuple = ()

    @property
    def input_mask(self):
        steps = torch.arange(self.ids.size(1), device=self.ids.device)
        return steps.unsqueeze(0) < self.input_lengths.unsqueeze(1)

    @property
    def output_mask(self):
        steps = torch.arange(self.mels.size(1), device=self.mels.device)
        return steps.unsqueeze(0) < self.output_lengths.unsqueeze(1)


def pad_batch(sequences, mels, dtype=torch.float64, utterance_ids=()):
    """Pad id sequences and ``(frames, n_mels)`` arrays into a Batch."""
    input_lengths = torch.tensor([len(seq) for seq in sequences], dtype=torch.long)
    output_lengths = torch.tensor([len(mel) for mel in mels], dtype=torch.long)
    n_mels = np.asarray(mels[0]).shape[1]

    ids = torch.zeros(len(sequences), int(input_lengths.max()), dtype=torch.long)
    padded = torch.zeros(len(mels), int(output_lengths.max()), n_mels, dtype=dtype)
    for row, (seq, mel) in enumerate(zip(sequences, mels)):
        ids[row, : len(seq)] = torch.as_tensor(list(seq), dtype=torch.long)
        padded[row, : len(mel)] = torch.as_tensor(np.asarray(mel), dtype=dtype)
    return Batch(ids, input_lengths, padded, output_lengths, tuple(utterance_ids))


@dataclass
class ModelOutput:
    mel_before: Tensor
    mel_after: Tensor
    gate_logits: Tensor
    alignments: Tensor


@dataclass
class LossBreakdown:
    mse_before: Tensor
    mse_after: Tensor
    gate_bce: Tensor
    total: Tensor

    def as_floats(self):
        return {name: float(getattr(self, name)) for name in ("mse_before", "mse_after", "gate_bce", "total")}


class StopReason(enum.Enum):
    GATE_FIRED = "GateFired"
    MAX_STEPS = "MaxSteps"


@dataclass
class DecoderOutput:
    """Single-utterance decoder result; ``alignment`` is ``(n_dec_frames, n_enc_steps)``."""

    mel_before: Tensor
    mel_after: Tensor
    gate_logits: Tensor
    alignment: Tensor
    stop_reason: Optional[StopReason] = None

    @property
    def n_frames(self):
        return self.mel_before.size(0)


class TacoModel(nn.Module):
    """Embedding -> encoder -> attention decoder -> postnet."""

    def __init__(self, cfg, seed=None):
        super().__init__()
        self.cfg = cfg
        with torch.random.fork_rng(devices=[]):
            if seed is not None:
                torch.manual_seed(seed)
            self.embedding = nn.Embedding(cfg.vocab_size, cfg.embed_dim)
            std = math.sqrt(2.0 / (cfg.vocab_size + cfg.embed_dim))
            bound = math.sqrt(3.0) * std
            nn.init.uniform_(self.embedding.weight, -bound, bound)
            self.encoder = Encoder(cfg)
            self.decoder = Decoder(cfg)
            self.postnet = Postnet(cfg)
        self.to(cfg.torch_dtype)

    @classmethod
    def from_parameters(cls, params, cfg):
        model = cls(cfg)
        model.load_parameters(params)
        return model

    def parameter_shapes(self):
        return {name: tuple(p.shape) for name, p in self.named_parameters()}

    def parameters_map(self):
        """Detached copies of every trainable tensor, keyed by namespaced name."""
        return {name: p.detach().clone() for name, p in self.named_parameters()}

    def load_parameters(self, params):
        """Copy a named tensor map into the model; names and shapes must match."""
        own = dict(self.named_parameters())
        for name, param in own.items():
            if name not in params:
                raise MissingTensor(name)
            value = torch.as_tensor(params[name])
            if tuple(value.shape) != tuple(param.shape):
                raise ParameterShapeError(
                    f"{name}: expected shape {tuple(param.shape)}, got {tuple(value.shape)}"
                )
            if not torch.all(torch.isfinite(value)):
                raise NumericalDivergence(f"{name} holds non-finite values")
        extra = sorted(set(params) - set(own))
        if extra:
            logger.warning("Ignoring %d unexpected tensors, e.g. %s", len(extra), extra[0])
        with torch.no_grad():
            for name, param in own.items():
                param.copy_(torch.as_tensor(params[name], dtype=param.dtype))

    def check_ids(self, ids):
        if ids.numel() and (int(ids.max()) >= self.cfg.vocab_size or int(ids.min()) < 0):
            bad = int(ids.max()) if int(ids.max()) >= self.cfg.vocab_size else int(ids.min())
            raise UnknownSymbol(f"id {bad} (vocab_size {self.cfg.vocab_size})")

    def encode_batch(self, ids, lengths, dropout):
        self.check_ids(ids)
        mask = torch.arange(ids.size(1)).unsqueeze(0) < lengths.unsqueeze(1)
        return self.encoder(self.embedding(ids), lengths, mask, dropout), mask

    def forward(self, batch, dropout):
        memory, mask = self.encode_batch(batch.ids, batch.input_lengths, dropout)
        mel_before, gates, alignments = self.decoder(memory, mask, batch.mels, dropout)
        frame_mask = batch.output_mask.unsqueeze(-1).to(mel_before.dtype)
        mel_before = mel_before * frame_mask
        mel_after = mel_before + self.postnet(mel_before, dropout) * frame_mask
        return ModelOutput(mel_before, mel_after, gates, alignments)


def compute_loss(output, batch):
    """Masked MSE before/after postnet plus gate BCE; padding is excluded from every mean."""
    mask = batch.output_mask.to(output.mel_before.dtype)
    n_valid = mask.sum()
    n_mels = output.mel_before.size(-1)
    frame_mask = mask.unsqueeze(-1)

    mse_before = (((output.mel_before - batch.mels) ** 2) * frame_mask).sum() / (n_valid * n_mels)
    mse_after = (((output.mel_after - batch.mels) ** 2) * frame_mask).sum() / (n_valid * n_mels)

    gate_targets = torch.zeros_like(output.gate_logits)
    rows = torch.arange(gate_targets.size(0))
    gate_targets[rows, batch.output_lengths - 1] = 1.0
    bce = F.binary_cross_entropy_with_logits(output.gate_logits, gate_targets, reduction="none")
    gate_bce = (bce * mask).sum() / n_valid

    total = mse_before + mse_after + gate_bce
    return LossBreakdown(mse_before, mse_after, gate_bce, total)


def _ids_tensor(symbols):
    ids = symbols.ids if hasattr(symbols, "ids") else symbols
    return torch.as_tensor(list(ids), dtype=torch.long)


def _mel_array(target_mel):
    values = target_mel.values if hasattr(target_mel, "values") else target_mel
    if isinstance(values, Tensor):
        values = values.detach().cpu().numpy()
    return np.asarray(values, dtype=np.float64)


def _single_batch(symbols, target_mel, model):
    mel = _mel_array(target_mel)
    if mel.ndim != 2 or mel.shape[0] < 1:
        raise ValueError("target mel must have at least one frame")
    return pad_batch([_ids_tensor(symbols).tolist()], [mel], dtype=model.cfg.torch_dtype)


def encode(symbols, model, train_mode=False, generator=None):
    """Encoder memory ``(n_enc_steps, memory_dim)`` for one symbol sequence."""
    ids = _ids_tensor(symbols).unsqueeze(0)
    lengths = torch.tensor([ids.size(1)])
    memory, _ = model.encode_batch(ids, lengths, DropoutSource(train_mode, generator))
    return memory[0]


@dataclass
class AttentionState:
    """Previous and cumulative attention weights over the encoder steps."""

    prev_weights: Tensor
    cum_weights: Tensor

    @classmethod
    def initial(cls, n_enc_steps, dtype=torch.float64):
        return cls(torch.zeros(n_enc_steps, dtype=dtype), torch.zeros(n_enc_steps, dtype=dtype))

    def advance(self, weights):
        return AttentionState(weights, self.cum_weights + weights)


def attention_step(query, memory, state, model):
    """One location-sensitive attention step for a single utterance.

    Returns ``(context, weights)``; ``query`` is the attention-RNN output.
    """
    n_enc = memory.size(0)
    if state.prev_weights.numel() != n_enc or state.cum_weights.numel() != n_enc:
        raise StateMismatch(
            f"attention state covers {state.prev_weights.numel()}/{state.cum_weights.numel()} "
            f"steps, memory has {n_enc}"
        )
    attention = model.decoder.attention
    batch_memory = memory.unsqueeze(0)
    context, weights = attention(
        query.unsqueeze(0),
        batch_memory,
        attention.process_memory(batch_memory),
        state.prev_weights.unsqueeze(0),
        state.cum_weights.unsqueeze(0),
    )
    return context[0], weights[0]


def forward_teacher_forced(symbols, target_mel, model, train_mode=False, generator=None):
    """Teacher-forced pass over one utterance; returns ``(DecoderOutput, LossBreakdown)``."""
    batch = _single_batch(symbols, target_mel, model)
    output = model(batch, DropoutSource(train_mode, generator))
    loss = compute_loss(output, batch)
    if not torch.isfinite(loss.total):
        raise NumericalDivergence(f"non-finite loss {float(loss.total)}")
    decoded = DecoderOutput(
        mel_before=output.mel_before[0],
        mel_after=output.mel_after[0],
        gate_logits=output.gate_logits[0],
        alignment=output.alignments[0],
    )
    return decoded, loss


def backward(symbols, target_mel, model, term="total", train_mode=False, generator=None):
    """Gradient of one loss term with respect to every named parameter.

    Dropout is off unless ``train_mode`` is set, so repeated calls agree exactly.
    Parameters a term does not depend on get zero gradients.
    """
    _, loss = forward_teacher_forced(symbols, target_mel, model, train_mode, generator)
    names, params = zip(*model.named_parameters())
    grads = torch.autograd.grad(getattr(loss, term), params, allow_unused=True)
    return {
        name: (grad if grad is not None else torch.zeros_like(param))
        for name, param, grad in zip(names, params, grads)
    }


@torch.no_grad()
def infer(symbols, model, seed=0, max_decoder_steps=None):
    """Autoregressive synthesis from a symbol sequence.

    The prenet keeps its dropout on (masks drawn from a generator seeded with
    ``seed``); decoding stops at the first step whose gate probability reaches
    ``gate_threshold`` or after ``max_decoder_steps``.
    """
    cfg = model.cfg
    max_steps = max_decoder_steps or cfg.max_decoder_steps
    if max_steps < 1:
        raise ConfigError("max_decoder_steps must be >= 1")

    generator = torch.Generator().manual_seed(seed)
    off = DropoutSource(False)
    memory = encode(symbols, model).unsqueeze(0)
    decoder = model.decoder
    processed_memory = decoder.attention.process_memory(memory)
    state = decoder.initial_state(memory)
    prenet_dropout = DropoutSource(False, generator)

    frame = memory.new_zeros(1, cfg.n_mels)
    frames, gates, alignments = [], [], []
    reason = StopReason.MAX_STEPS
    threshold = cfg.gate_logit_threshold
    for _ in range(max_steps):
        prenet_out = decoder.prenet(frame, prenet_dropout, cfg.decoder_dropout, force=True)
        frame, gate, weights, state = decoder.step(
            prenet_out, state, memory, processed_memory, None, off
        )
        frames.append(frame[0])
        gates.append(gate[0])
        alignments.append(weights[0])
        if float(gate[0]) >= threshold:
            reason = StopReason.GATE_FIRED
            break

    mel_before = torch.stack(frames)
    mel_after = mel_before + model.postnet(mel_before.unsqueeze(0), off)[0]
    return DecoderOutput(
        mel_before=mel_before,
        mel_after=mel_after,
        gate_logits=torch.stack(gates),
        alignment=torch.stack(alignments),
        stop_reason=reason,
    )


class StateMismatch(TTSError):
    """Raised when attention state vectors do not match the encoder length."""

    code = "E_STATE_MISMATCH"


class NumericalDivergence(TTSError):
    """Raised when a loss, gradient or parameter stops being finite."""

    code = "E_NUMERICAL_DIVERGENCE"


class MissingTensor(TTSError):
    """Raised when a parameter map lacks a tensor the model needs."""

    code = "E_MISSING_TENSOR"

    def __init__(self, name):
        self.name = name
        super().__init__(f"missing tensor '{name}'")


class ParameterShapeError(TTSError):
    """Raised when a named tensor has the wrong shape for the model."""

    code = "E_PARAMETER_SHAPE"
