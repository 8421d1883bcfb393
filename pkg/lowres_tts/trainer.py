"""
Trainer module for the lowres-tts toolkit.
Adam with decoupled weight decay, plateau annealing, and the teacher-forced
training loop with validation, checkpoints and a loss log.
"""

import csv
import math
import logging
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import torch
from torch.utils.data import DataLoader, Dataset, Subset

from lowres_tts.checkpoint import Checkpoint, save_checkpoint
from lowres_tts.config import ConfigError
from lowres_tts.corpus import EmptyManifest
from lowres_tts.features import FeatureConfig, FeaturesMissing, feature_path, read_mel_cache
from lowres_tts.model import (
    DropoutSource,
    NumericalDivergence,
    TacoModel,
    compute_loss,
    pad_batch,
)
from lowres_tts.text import normalize_text
from lowres_tts.transfer import TransferSpec, surgery

logger = logging.getLogger(__name__)

LR_FLOOR = 1e-7
BEST_NAME = "best.lrtt"
FINAL_NAME = "final.lrtt"
LAST_GOOD_NAME = "last_good.lrtt"
LOSS_LOG_NAME = "loss.csv"
LOSS_LOG_HEADER = ("iteration", "train_loss", "val_loss", "lr")


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 4e-5
    beta1: float = 0.9
    beta2: float = 0.999
    weight_decay: float = 1e-5
    numerical_eps: float = 1e-8

    def __post_init__(self):
        if not self.lr > 0:
            raise ConfigError("adam: lr must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("adam: betas must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("adam: weight_decay must be >= 0")
        if not self.numerical_eps > 0:
            raise ConfigError("adam: numerical_eps must be positive")


@dataclass(frozen=True)
class AnnealConfig:
    factor: float = 0.5
    patience_validations: int = 5

    def __post_init__(self):
        if not 0 < self.factor < 1:
            raise ConfigError("anneal: factor must lie in (0, 1)")
        if self.patience_validations < 1:
            raise ConfigError("anneal: patience_validations must be >= 1")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 430
    batch_size: int = 8
    grad_clip_norm: float = 1.0
    anneal: AnnealConfig = field(default_factory=AnnealConfig)
    validation_interval_iters: int = 100
    seed: int = 0
    max_iterations: Optional[int] = None
    val_fraction: float = 0.1
    num_workers: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("train: epochs must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("train: batch_size must be >= 1")
        if not self.grad_clip_norm > 0:
            raise ConfigError("train: grad_clip_norm must be positive")
        if self.validation_interval_iters < 1:
            raise ConfigError("train: validation_interval_iters must be >= 1")
        if self.max_iterations is not None and self.max_iterations < 1:
            raise ConfigError("train: max_iterations must be >= 1")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("train: val_fraction must lie in [0, 1)")
        if self.num_workers < 0:
            raise ConfigError("train: num_workers must be >= 0")


@dataclass
class OptimizerState:
    step: int
    exp_avg: dict
    exp_avg_sq: dict

    @classmethod
    def fresh(cls, params):
        return cls(
            step=0,
            exp_avg={name: torch.zeros_like(p) for name, p in params.items()},
            exp_avg_sq={name: torch.zeros_like(p) for name, p in params.items()},
        )

    @classmethod
    def from_checkpoint(cls, ckpt):
        step, exp_avg, exp_avg_sq = ckpt.optimizer_tensors()
        return cls(step=step, exp_avg=dict(exp_avg), exp_avg_sq=dict(exp_avg_sq))


@dataclass(frozen=True)
class LossRecord:
    iteration: int
    train_loss: float
    val_loss: Optional[float]
    lr: float


def adam_step(params, grads, state, cfg, lr=None):
    """One Adam update over a named tensor map; inputs are left untouched.

    Weight decay is decoupled (``p <- p - lr * wd * p``) and applied before the
    bias-corrected moment update. ``lr`` overrides ``cfg.lr`` (annealing).
    """
    lr = cfg.lr if lr is None else lr
    for name, grad in grads.items():
        if not torch.all(torch.isfinite(grad)):
            raise NumericalDivergence(f"non-finite gradient for '{name}'")
    if set(grads) != set(params):
        raise ValueError("gradient names do not match parameter names")

    step = state.step + 1
    bias1 = 1.0 - cfg.beta1 ** step
    bias2 = 1.0 - cfg.beta2 ** step
    new_params, exp_avg, exp_avg_sq = {}, {}, {}
    for name, param in params.items():
        grad = grads[name]
        m = cfg.beta1 * state.exp_avg[name] + (1.0 - cfg.beta1) * grad
        v = cfg.beta2 * state.exp_avg_sq[name] + (1.0 - cfg.beta2) * grad * grad
        decayed = param - lr * cfg.weight_decay * param
        new_params[name] = decayed - lr * (m / bias1) / (torch.sqrt(v / bias2) + cfg.numerical_eps)
        exp_avg[name] = m
        exp_avg_sq[name] = v
    return new_params, OptimizerState(step, exp_avg, exp_avg_sq)


def global_norm(grads):
    return math.sqrt(sum(float(torch.sum(g.double() ** 2)) for g in grads.values()))


def clip_grad_norm(grads, max_norm):
    """Scale gradients so their global L2 norm is at most ``max_norm``.

    Returns the (possibly scaled) gradients and the norm before clipping.
    """
    norm = global_norm(grads)
    if not math.isfinite(norm):
        raise NumericalDivergence(f"gradient norm is {norm}")
    if norm <= max_norm:
        return grads, norm
    scale = max_norm / (norm + 1e-12)
    return {name: g * scale for name, g in grads.items()}, norm


def anneal_lr(initial_lr, records, cfg):
    """Learning rate after replaying the validation history.

    Every ``patience_validations`` consecutive validations without a new best
    multiply the rate by ``factor``; the rate never drops below 1e-7.
    """
    lr = initial_lr
    best = math.inf
    stale = 0
    for record in records:
        if record.val_loss is None:
            continue
        if record.val_loss < best:
            best = record.val_loss
            stale = 0
            continue
        stale += 1
        if stale == cfg.patience_validations:
            lr = max(lr * cfg.factor, LR_FLOOR)
            stale = 0
    return max(lr, LR_FLOOR)


def write_loss_log(records, path):
    """CSV ``iteration,train_loss,val_loss,lr``; floats use repr so they read back exactly."""
    with open(path, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(LOSS_LOG_HEADER)
        for r in records:
            writer.writerow(
                [r.iteration, repr(r.train_loss), "" if r.val_loss is None else repr(r.val_loss), repr(r.lr)]
            )


def read_loss_log(path):
    records = []
    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if tuple(reader.fieldnames or ()) != LOSS_LOG_HEADER:
            raise ValueError(f"{path}: expected header {','.join(LOSS_LOG_HEADER)}")
        for row in reader:
            records.append(
                LossRecord(
                    iteration=int(row["iteration"]),
                    train_loss=float(row["train_loss"]),
                    val_loss=float(row["val_loss"]) if row["val_loss"] else None,
                    lr=float(row["lr"]),
                )
            )
    return records


class UtteranceDataset(Dataset):
    """(utterance id, symbol ids, mel frames) triples read from the feature cache."""

    def __init__(self, entries, symbols, feature_dir, feature_cfg=None):
        if not entries:
            raise EmptyManifest("manifest has no entries")
        self.feature_cfg = feature_cfg or FeatureConfig()
        self.items = []
        for entry in entries:
            path = feature_path(feature_dir, entry.utterance_id)
            if not path.exists():
                raise FeaturesMissing(str(path))
            ids = normalize_text(entry.text, symbols).ids
            self.items.append((entry.utterance_id, ids, path))

    def __len__(self):
        return len(self.items)

    def __getitem__(self, index):
        utterance_id, ids, path = self.items[index]
        return utterance_id, ids, read_mel_cache(path, self.feature_cfg).values


class InMemoryDataset(Dataset):
    """Same triples as UtteranceDataset, held in memory (synthetic corpora)."""

    def __init__(self, items):
        if not items:
            raise EmptyManifest("dataset has no items")
        self.items = list(items)

    def __len__(self):
        return len(self.items)

    def __getitem__(self, index):
        return self.items[index]


def split_indices(n_items, val_fraction, seed):
    """Deterministic seeded train/validation split.

    With two or more items the validation side gets at least one; a single
    item is used for both sides.
    """
    order = np.random.default_rng(seed).permutation(n_items).tolist()
    if n_items < 2 or val_fraction == 0:
        return order, list(order)
    n_val = min(n_items - 1, max(1, int(round(n_items * val_fraction))))
    return order[n_val:], order[:n_val]


def make_collate(dtype):
    def collate(items):
        utterance_ids, sequences, mels = zip(*items)
        return pad_batch(sequences, mels, dtype=dtype, utterance_ids=utterance_ids)

    return collate


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    records: list
    stopped_early: bool = False


class Trainer:
    """Owns the model, the optimizer state and the loss log for one run.

    ``callback(record, model)`` is invoked after every iteration and may return
    True to stop training early.
    """

    def __init__(self, model_cfg, train_cfg=None, adam_cfg=None, out_dir=None):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg or TrainConfig()
        self.adam_cfg = adam_cfg or AdamConfig()
        self.out_dir = Path(out_dir) if out_dir is not None else None
        if self.out_dir is not None:
            self.out_dir.mkdir(parents=True, exist_ok=True)

    def _loader(self, dataset, indices, shuffle, generator=None):
        return DataLoader(
            Subset(dataset, indices),
            batch_size=self.train_cfg.batch_size,
            shuffle=shuffle,
            generator=generator,
            collate_fn=make_collate(self.model_cfg.torch_dtype),
            num_workers=self.train_cfg.num_workers,
        )

    def _validate(self, model, loader):
        totals, weights = [], []
        with torch.no_grad():
            for batch in loader:
                loss = compute_loss(model(batch, DropoutSource(False)), batch)
                totals.append(float(loss.total))
                weights.append(len(batch.output_lengths))
        return float(np.average(totals, weights=weights))

    def _save(self, model, symbols, state, iteration, name):
        ckpt = Checkpoint.build(
            self.model_cfg, symbols, model.parameters_map(),
            iteration=iteration, seed=self.train_cfg.seed, optimizer=state,
        )
        if self.out_dir is not None:
            save_checkpoint(ckpt, self.out_dir / name)
        return ckpt

    def _write_log(self, records):
        if self.out_dir is not None:
            write_loss_log(records, self.out_dir / LOSS_LOG_NAME)

    def fit(self, dataset, symbols, params=None, optimizer_state=None, callback=None):
        cfg = self.train_cfg
        if len(symbols) != self.model_cfg.vocab_size:
            raise ConfigError(
                f"symbol table has {len(symbols)} ids but model vocab_size is {self.model_cfg.vocab_size}"
            )
        model = TacoModel(self.model_cfg, seed=cfg.seed)
        if params is not None:
            model.load_parameters(params)
        state = optimizer_state or OptimizerState.fresh(model.parameters_map())

        train_idx, val_idx = split_indices(len(dataset), cfg.val_fraction, cfg.seed)
        shuffle_gen = torch.Generator().manual_seed(cfg.seed)
        dropout = DropoutSource(True, torch.Generator().manual_seed(cfg.seed + 1))
        train_loader = self._loader(dataset, train_idx, shuffle=True, generator=shuffle_gen)
        val_loader = self._loader(dataset, val_idx, shuffle=False)
        logger.info(
            "Training on %d utterances, validating on %d", len(train_idx), len(val_idx)
        )

        named = dict(model.named_parameters())
        names = list(named)
        records = []
        lr = self.adam_cfg.lr
        best_val = math.inf
        iteration = 0
        stopped_early = False
        limit = cfg.max_iterations

        for epoch in range(cfg.epochs):
            for batch in train_loader:
                iteration += 1
                loss = compute_loss(model(batch, dropout), batch)
                try:
                    if not torch.isfinite(loss.total):
                        raise NumericalDivergence(
                            f"non-finite loss {float(loss.total)} at iteration {iteration}"
                        )
                    grads = torch.autograd.grad(
                        loss.total, [named[n] for n in names], allow_unused=True
                    )
                    grads = {
                        n: (g if g is not None else torch.zeros_like(named[n]))
                        for n, g in zip(names, grads)
                    }
                    grads, _ = clip_grad_norm(grads, cfg.grad_clip_norm)
                    new_params, state = adam_step(
                        model.parameters_map(), grads, state, self.adam_cfg, lr=lr
                    )
                    model.load_parameters(new_params)
                except NumericalDivergence:
                    self._write_log(records)
                    self._save(model, symbols, state, iteration - 1, LAST_GOOD_NAME)
                    raise

                val_loss = None
                if iteration % cfg.validation_interval_iters == 0:
                    val_loss = self._validate(model, val_loader)
                record = LossRecord(iteration, float(loss.total), val_loss, lr)
                records.append(record)

                if val_loss is not None:
                    logger.info(
                        "iter %d train %.5f val %.5f lr %.3g",
                        iteration, record.train_loss, val_loss, lr,
                    )
                    if val_loss < best_val:
                        best_val = val_loss
                        self._save(model, symbols, state, iteration, BEST_NAME)
                    new_lr = anneal_lr(self.adam_cfg.lr, records, cfg.anneal)
                    if new_lr < lr:
                        logger.warning("Annealing learning rate %.3g -> %.3g", lr, new_lr)
                    lr = new_lr

                if callback is not None and callback(record, model):
                    stopped_early = True
                    break
                if limit is not None and iteration >= limit:
                    break
            if stopped_early or (limit is not None and iteration >= limit):
                break

        self._write_log(records)
        final = self._save(model, symbols, state, iteration, FINAL_NAME)
        logger.info("Finished after %d iterations (%d epochs started)", iteration, epoch + 1)
        return TrainResult(final, records, stopped_early)


def fit(dataset, symbols, model_cfg, train_cfg=None, adam_cfg=None, params=None,
        warm_start=None, transfer_spec=None, out_dir=None, callback=None):
    """Train a model, optionally warm-started from a checkpoint through surgery."""
    if warm_start is not None:
        spec = transfer_spec or TransferSpec(seed=(train_cfg or TrainConfig()).seed)
        params = surgery(warm_start, symbols, spec, model_cfg)
    trainer = Trainer(model_cfg, train_cfg, adam_cfg, out_dir)
    return trainer.fit(dataset, symbols, params=params, callback=callback)
