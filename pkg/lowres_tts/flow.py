"""
Flow vocoder module for the lowres-tts toolkit.
A small normalizing flow over grouped audio samples: invertible mixing
matrices alternate with mel-conditioned affine couplings.
"""

import math
import logging
import dataclasses
from dataclasses import dataclass

import numpy as np
import torch

from lowres_tts.audio import AudioClip
from lowres_tts.config import ConfigError
from lowres_tts.errors import TTSError
from lowres_tts.trainer import AdamConfig, OptimizerState, adam_step

logger = logging.getLogger(__name__)

DET_TOLERANCE = 1e-8


@dataclass(frozen=True)
class FlowConfig:
    n_flows: int = 4
    group_size: int = 8
    coupling_hidden: int = 32
    mel_cond_dim: int = 80
    sigma: float = 1.0
    hop: int = 256

    def __post_init__(self):
        if self.n_flows < 1:
            raise ConfigError("flow: n_flows must be >= 1")
        if self.group_size < 2 or self.group_size % 2:
            raise ConfigError("flow: group_size must be even")
        if self.coupling_hidden < 1 or self.mel_cond_dim < 1 or self.hop < 1:
            raise ConfigError("flow: dims must be >= 1")
        if not self.sigma > 0:
            raise ConfigError("flow: sigma must be positive")

    @property
    def half(self):
        return self.group_size // 2

    def to_dict(self):
        return dataclasses.asdict(self)


def _name(k, part):
    return f"flows.{k}.{part}"


def _random_rotation(size, generator):
    q, r = torch.linalg.qr(torch.randn(size, size, generator=generator, dtype=torch.float64))
    # Fix the sign convention of QR, then force det = +1
    q = q * torch.sign(torch.diagonal(r)).unsqueeze(0)
    if torch.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def init_flow_params(cfg, seed=0, identity=False, coupling_scale=0.05):
    """Flow parameters keyed ``flows.<k>.<part>``.

    ``identity`` gives identity mixing and zero coupling outputs, so the whole
    flow is the identity map.
    """
    generator = torch.Generator().manual_seed(seed)
    g, h, hidden, cond = cfg.group_size, cfg.half, cfg.coupling_hidden, cfg.mel_cond_dim

    def small(*shape):
        return torch.randn(*shape, generator=generator, dtype=torch.float64) * coupling_scale

    params = {}
    for k in range(cfg.n_flows):
        params[_name(k, "mixing")] = (
            torch.eye(g, dtype=torch.float64) if identity else _random_rotation(g, generator)
        )
        params[_name(k, "coupling.in.weight")] = small(hidden, h + cond)
        params[_name(k, "coupling.in.bias")] = torch.zeros(hidden, dtype=torch.float64)
        if identity:
            for part in ("scale", "shift"):
                params[_name(k, f"coupling.{part}.weight")] = torch.zeros(h, hidden, dtype=torch.float64)
                params[_name(k, f"coupling.{part}.bias")] = torch.zeros(h, dtype=torch.float64)
        else:
            for part in ("scale", "shift"):
                params[_name(k, f"coupling.{part}.weight")] = small(h, hidden)
                params[_name(k, f"coupling.{part}.bias")] = small(h)
    return params


def group_audio(samples, group_size):
    """Shape samples into ``(n_groups, group_size)``, padding trailing zeros."""
    samples = torch.as_tensor(np.asarray(samples), dtype=torch.float64).reshape(-1)
    pad = (-samples.numel()) % group_size
    if pad:
        samples = torch.cat((samples, samples.new_zeros(pad)))
    return samples.reshape(-1, group_size)


def _as_groups(audio, cfg):
    audio = torch.as_tensor(audio, dtype=torch.float64)
    if audio.dim() == 1:
        if audio.numel() % cfg.group_size:
            raise ValueError(f"audio length {audio.numel()} is not a multiple of {cfg.group_size}")
        audio = audio.reshape(-1, cfg.group_size)
    if audio.dim() != 2 or audio.size(1) != cfg.group_size:
        raise ValueError(f"audio groups must be (n, {cfg.group_size}), got {tuple(audio.shape)}")
    return audio


def upsample_condition(mel_cond, n_groups, cfg):
    """Per-group conditioning by repeating each mel frame over the samples it covers."""
    mel_cond = torch.as_tensor(mel_cond, dtype=torch.float64)
    if mel_cond.dim() != 2 or mel_cond.size(1) != cfg.mel_cond_dim:
        raise ValueError(f"mel conditioning must be (frames, {cfg.mel_cond_dim})")
    frame = torch.div(torch.arange(n_groups) * cfg.group_size, cfg.hop, rounding_mode="floor")
    return mel_cond[frame.clamp(max=mel_cond.size(0) - 1)]


def _mixing(params, k):
    w = params[_name(k, "mixing")]
    logabsdet = torch.linalg.slogdet(w).logabsdet
    if not torch.isfinite(logabsdet) or float(logabsdet) <= math.log(DET_TOLERANCE):
        raise SingularTransform(f"mixing matrix {k} has |det| <= {DET_TOLERANCE}")
    return w, logabsdet


def _coupling(params, k, xa, cond):
    hidden = torch.tanh(
        torch.cat((xa, cond), dim=1) @ params[_name(k, "coupling.in.weight")].T
        + params[_name(k, "coupling.in.bias")]
    )
    log_s = hidden @ params[_name(k, "coupling.scale.weight")].T + params[_name(k, "coupling.scale.bias")]
    t = hidden @ params[_name(k, "coupling.shift.weight")].T + params[_name(k, "coupling.shift.bias")]
    return log_s, t


def flow_forward(audio_groups, mel_cond, params, cfg):
    """Map audio groups to latents; returns ``(z, log_det_total)``."""
    x = _as_groups(audio_groups, cfg)
    cond = upsample_condition(mel_cond, x.size(0), cfg)
    h = cfg.half
    log_det = x.new_zeros(())
    for k in range(cfg.n_flows):
        w, logabsdet = _mixing(params, k)
        x = x @ w.T
        log_det = log_det + x.size(0) * logabsdet

        xa, xb = x[:, :h], x[:, h:]
        log_s, t = _coupling(params, k, xa, cond)
        x = torch.cat((xa, xb * torch.exp(log_s) + t), dim=1)
        log_det = log_det + log_s.sum()
    return x, log_det


def flow_inverse(z, mel_cond, params, cfg):
    """Exact inverse of ``flow_forward``: latents back to audio groups."""
    y = _as_groups(z, cfg)
    cond = upsample_condition(mel_cond, y.size(0), cfg)
    h = cfg.half
    for k in reversed(range(cfg.n_flows)):
        ya, yb = y[:, :h], y[:, h:]
        log_s, t = _coupling(params, k, ya, cond)
        y = torch.cat((ya, (yb - t) * torch.exp(-log_s)), dim=1)

        w, _ = _mixing(params, k)
        y = torch.linalg.solve(w, y.T).T
    return y


def flow_nll(audio, mel_cond, params, cfg):
    """Negative log-likelihood per sample: ``(|z|^2 / (2 sigma^2) - log_det) / n``."""
    z, log_det = flow_forward(audio, mel_cond, params, cfg)
    return (torch.sum(z * z) / (2.0 * cfg.sigma ** 2) - log_det) / z.numel()


def fit_flow(audio, mel_cond, params, cfg, steps=100, lr=1e-3):
    """Adam on ``flow_nll``; returns the fitted parameters and the nll history."""
    adam_cfg = AdamConfig(lr=lr, weight_decay=0.0)
    current = {name: value.detach().clone() for name, value in params.items()}
    state = OptimizerState.fresh(current)
    history = []
    for _ in range(steps):
        leaves = {name: value.clone().requires_grad_(True) for name, value in current.items()}
        nll = flow_nll(audio, mel_cond, leaves, cfg)
        names = list(leaves)
        grads = torch.autograd.grad(nll, [leaves[n] for n in names])
        history.append(float(nll))
        current, state = adam_step(current, dict(zip(names, grads)), state, adam_cfg)
        current = {name: value.detach() for name, value in current.items()}
    if steps:
        logger.info("Flow nll %.5f -> %.5f over %d steps", history[0], history[-1], steps)
    return current, history


def flow_synthesize(mel, params, cfg, seed=0, temperature=1.0):
    """Sample latents and invert the flow to a waveform clip for ``mel``."""
    n_samples = max(1, (mel.n_frames - 1) * cfg.hop)
    n_groups = math.ceil(n_samples / cfg.group_size)
    generator = torch.Generator().manual_seed(seed)
    z = torch.randn(n_groups, cfg.group_size, generator=generator, dtype=torch.float64)
    z = z * cfg.sigma * temperature
    audio = flow_inverse(z, mel.values, params, cfg).reshape(-1)[:n_samples]
    return AudioClip.from_unclamped(audio.numpy(), mel.config.sample_rate_hz)


class SingularTransform(TTSError):
    """Raised when a mixing matrix is (numerically) singular."""

    code = "E_SINGULAR_TRANSFORM"
