"""
End-to-end pipeline: prep -> features -> train -> synth in one run directory.
Each finished stage leaves a stamp so an interrupted run resumes where it stopped.
"""

import logging
from pathlib import Path
from dataclasses import dataclass

from lowres_tts.checkpoint import load_checkpoint
from lowres_tts.config import ConfigError
from lowres_tts.corpus import MANIFEST_NAME, PrepConfig, VadConfig, prepare_corpus, read_manifest
from lowres_tts.errors import TTSError
from lowres_tts.features import extract_features
from lowres_tts.integrity import DigestManager
from lowres_tts.transfer import TransferSpec, surgery
from lowres_tts.trainer import FINAL_NAME

from lowres_tts.cli.context import load_symbols
from lowres_tts.cli.model_commands import VOCODERS, synthesize, train_model

logger = logging.getLogger(__name__)

RUN_FORMAT = 1
RUNFMT_NAME = "RUNFMT"
DIGESTS_NAME = "DIGESTS"
STAMP_DIR = ".stamps"
STAGES = ("prep", "features", "train", "synth")


@dataclass(frozen=True)
class PipelineConfig:
    """The ``[pipeline]`` section. An empty ``text`` speaks the first manifest transcript."""

    text: str = ""
    warm_start: str = ""
    vocoder: str = "griffinlim"
    flow_ckpt: str = ""
    gl_iters: int = 60

    def __post_init__(self):
        if self.vocoder not in VOCODERS:
            raise ConfigError(f"pipeline: unknown vocoder '{self.vocoder}'")
        if self.vocoder == "flow" and not self.flow_ckpt:
            raise ConfigError("pipeline: vocoder 'flow' needs flow_ckpt")
        if self.gl_iters < 1:
            raise ConfigError("pipeline: gl_iters must be >= 1")


class RunLayout:
    """Paths inside a run directory."""

    def __init__(self, root):
        self.root = Path(root)
        self.corpus = self.root / "corpus"
        self.manifest = self.corpus / MANIFEST_NAME
        self.features = self.root / "features"
        self.checkpoints = self.root / "checkpoints"
        self.final_checkpoint = self.checkpoints / FINAL_NAME
        self.synth = self.root / "synth"
        self.sample_wav = self.synth / "sample.wav"
        self.alignments = (self.synth / "alignment.pgm", self.synth / "alignment.csv")
        self.stamps = self.root / STAMP_DIR

    def stamp(self, stage):
        return self.stamps / f"{stage}.done"

    def is_done(self, stage):
        return self.stamp(stage).exists()

    def mark_done(self, stage):
        self.stamps.mkdir(parents=True, exist_ok=True)
        self.stamp(stage).write_text("done\n", encoding="utf-8")

    def check_format(self):
        marker = self.root / RUNFMT_NAME
        if not marker.exists():
            return
        found = marker.read_text(encoding="utf-8").strip()
        if found != str(RUN_FORMAT):
            raise ConfigError(f"{self.root} uses run format {found}, this tool writes {RUN_FORMAT}")

    def write_format(self):
        self.root.mkdir(parents=True, exist_ok=True)
        (self.root / RUNFMT_NAME).write_text(f"{RUN_FORMAT}\n", encoding="utf-8")


class Pipeline:
    """Runs the stages in order, skipping those already stamped."""

    def __init__(self, ctx, in_dir, out_dir, text=None):
        self.ctx = ctx
        self.in_dir = Path(in_dir)
        self.layout = RunLayout(out_dir)
        overrides = {"text": text} if text else None
        self.cfg = ctx.section(PipelineConfig(), "pipeline", overrides)

    def run(self):
        """Execute every pending stage; returns the names of the stages that ran."""
        self.layout.check_format()
        self.layout.write_format()
        ran = []
        for stage in STAGES:
            if self.layout.is_done(stage):
                logger.info("Stage %s already done, skipping", stage)
                continue
            if stage == "train" and self.cfg.warm_start:
                self._guarded("transfer", self.check_transfer)
            self._guarded(stage, getattr(self, f"run_{stage}"))
            self.layout.mark_done(stage)
            ran.append(stage)
        DigestManager(self.layout.root, skip_dirs=(STAMP_DIR,)).write_listing(DIGESTS_NAME)
        return ran

    def _guarded(self, stage, action):
        logger.info("Stage %s starting", stage)
        try:
            action()
        except TTSError as e:
            raise StageFailed(stage, e) from e

    def run_prep(self):
        prep_cfg = self.ctx.section(PrepConfig(), "prep")
        vad_cfg = self.ctx.section(VadConfig(), "vad")
        summary = prepare_corpus(self.in_dir, self.layout.corpus, prep_cfg, vad_cfg)
        self.ctx.echo(f"prep: utterances={len(summary.entries)} skipped={len(summary.skipped)}")

    def run_features(self):
        prep_cfg = self.ctx.section(PrepConfig(), "prep")
        cfg = self.ctx.feature_config(prep_cfg.rate)
        paths = extract_features(
            read_manifest(self.layout.manifest), self.layout.corpus, self.layout.features, cfg
        )
        self.ctx.echo(f"features: files={len(paths)}")

    def check_transfer(self):
        """Fail before training when the warm-start checkpoint cannot be transplanted."""
        table = load_symbols(manifest=self.layout.manifest)
        model_cfg = self.ctx.model_config(table)
        spec = self.ctx.section(TransferSpec(seed=self.ctx.seed), "transfer")
        surgery(load_checkpoint(self.cfg.warm_start), table, spec, model_cfg)

    def run_train(self):
        result = train_model(
            self.ctx, self.layout.manifest, self.layout.features, self.layout.checkpoints,
            warm_start=self.cfg.warm_start or None,
        )
        last = result.records[-1]
        self.ctx.echo(f"train: iterations={last.iteration} final_train_loss={last.train_loss!r}")

    def sample_text(self):
        if self.cfg.text:
            return self.cfg.text
        return read_manifest(self.layout.manifest)[0].text

    def run_synth(self):
        self.layout.synth.mkdir(parents=True, exist_ok=True)
        output = synthesize(
            self.ctx, self.layout.final_checkpoint, self.sample_text(), self.layout.sample_wav,
            vocoder=self.cfg.vocoder, flow_ckpt=self.cfg.flow_ckpt or None,
            gl_iters=self.cfg.gl_iters, alignment_out=self.layout.alignments,
        )
        self.ctx.echo(f"synth: frames={output.n_frames} stop_reason={output.stop_reason.value}")


def run_pipeline(ctx, in_dir, out_dir, text=None):
    return Pipeline(ctx, in_dir, out_dir, text).run()


class PipelineCommand:
    """Registers the ``pipeline`` subcommand."""

    def register(self, subparsers, parents):
        pipeline = subparsers.add_parser(
            "pipeline", parents=parents, help="run prep, features, train and synth into a run directory"
        )
        pipeline.add_argument("--in", dest="in_dir", required=True, help="directory of WAV/TXT pairs")
        pipeline.add_argument("--out", dest="out_dir", required=True, help="run directory")
        pipeline.add_argument("--text", help="sentence to synthesize at the end")
        pipeline.set_defaults(handler=self.run)

    def run(self, args, ctx):
        if not args.config:
            raise ConfigError("pipeline needs --config")
        ran = run_pipeline(ctx, args.in_dir, args.out_dir, args.text)
        ctx.echo(f"stages_run={','.join(ran) if ran else 'none'}")
        ctx.echo(f"out={args.out_dir}")


class StageFailed(TTSError):
    """Raised when a pipeline stage fails; keeps the code of the underlying error."""

    code = "E_STAGE_FAILED"

    def __init__(self, stage, cause):
        self.stage = stage
        self.cause = cause
        self.code = getattr(cause, "code", self.code)
        super().__init__(f"{stage}: {cause}")
