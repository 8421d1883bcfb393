"""
Shared state handed to every command group.
"""

import sys
import logging
import dataclasses
from pathlib import Path

from lowres_tts.config import ConfigError, layered
from lowres_tts.corpus import SYMBOLS_NAME, corpus_rate
from lowres_tts.features import FeatureConfig
from lowres_tts.model import ModelConfig
from lowres_tts.text import SymbolTable
from lowres_tts.trainer import AdamConfig, AnnealConfig, TrainConfig

logger = logging.getLogger(__name__)

DEFAULT_SEED = 0


class CommandContext:
    """Config-file sections, the global seed and the output stream."""

    def __init__(self, file_config=None, seed=None, stdout=None):
        self.file_config = file_config or {}
        self.seed_override = seed
        self.stdout = stdout or sys.stdout

    @property
    def seed(self):
        if self.seed_override is not None:
            return self.seed_override
        return self.file_config.get("train", {}).get("seed", DEFAULT_SEED)

    def echo(self, text=""):
        print(text, file=self.stdout)

    def section(self, default, name, overrides=None):
        """``default`` < ``[name]`` section of the config file < ``overrides``."""
        return layered(default, self.file_config, name, overrides)

    def feature_config(self, sample_rate_hz=None):
        default = FeatureConfig()
        if sample_rate_hz is not None:
            default = dataclasses.replace(
                default,
                sample_rate_hz=sample_rate_hz,
                fmax_hz=min(default.fmax_hz, sample_rate_hz / 2),
            )
        return self.section(default, "features")

    def corpus_feature_config(self, manifest):
        """Feature settings for a prepared corpus, at the rate its WAVs were written at.

        Falls back to ``prep.rate`` from the config file for corpora without a
        recorded rate.
        """
        rate = corpus_rate(Path(manifest).parent)
        if rate is None:
            rate = self.file_config.get("prep", {}).get("rate")
        return self.feature_config(rate)

    def model_config(self, table, overrides=None):
        if "vocab_size" in self.file_config.get("model", {}):
            raise ConfigError("model.vocab_size comes from the symbol table and cannot be set")
        return self.section(ModelConfig(vocab_size=len(table)), "model", overrides)

    def train_configs(self, train_overrides=None, adam_overrides=None):
        """``(TrainConfig, AdamConfig)`` with the ``anneal`` section folded into the former."""
        overrides = dict(train_overrides or {})
        if self.seed_override is not None:
            overrides["seed"] = self.seed_override
        train_cfg = self.section(TrainConfig(), "train", overrides)
        anneal = self.section(train_cfg.anneal, "anneal")
        train_cfg = dataclasses.replace(train_cfg, anneal=anneal)
        return train_cfg, self.section(AdamConfig(), "adam", adam_overrides)


def load_symbols(path=None, manifest=None):
    """Symbol table from ``path``, or ``symbols.json`` next to the manifest."""
    if path is None:
        if manifest is None:
            raise ConfigError("no symbol table given")
        path = Path(manifest).parent / SYMBOLS_NAME
    return SymbolTable.load(path)
