"""
Model commands: train, surgery, synth and flow-fit.
"""

import logging
import dataclasses
from pathlib import Path

import numpy as np

from lowres_tts.audio import read_wav, write_wav
from lowres_tts.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from lowres_tts.config import ConfigError
from lowres_tts.corpus import read_manifest
from lowres_tts.evaluation import (
    AlignmentMatrix,
    export_loss_plot,
    write_alignment_csv,
    write_alignment_pgm,
)
from lowres_tts.features import MelSpectrogram, mel_spectrogram
from lowres_tts.flow import FlowConfig, fit_flow, flow_synthesize, group_audio, init_flow_params
from lowres_tts.model import TacoModel, infer
from lowres_tts.text import normalize_text
from lowres_tts.trainer import LOSS_LOG_NAME, UtteranceDataset, fit
from lowres_tts.transfer import TransferSpec, compat_report, surgery
from lowres_tts.vocoder import griffin_lim

from lowres_tts.cli.context import load_symbols

logger = logging.getLogger(__name__)

VOCODERS = ("griffinlim", "flow")
FLOW_KIND = "flow"


def train_model(ctx, manifest, features_dir, out_dir, symbols_path=None, warm_start=None,
                model_overrides=None, train_overrides=None, adam_overrides=None):
    """Train from a manifest and feature cache; returns the TrainResult."""
    manifest = Path(manifest)
    table = load_symbols(symbols_path, manifest)
    model_cfg = ctx.model_config(table, model_overrides)
    train_cfg, adam_cfg = ctx.train_configs(train_overrides, adam_overrides)
    dataset = UtteranceDataset(
        read_manifest(manifest), table, features_dir, ctx.corpus_feature_config(manifest)
    )
    source = load_checkpoint(warm_start) if warm_start else None
    spec = ctx.section(TransferSpec(seed=train_cfg.seed), "transfer")
    result = fit(
        dataset, table, model_cfg, train_cfg, adam_cfg,
        warm_start=source, transfer_spec=spec, out_dir=out_dir,
    )
    export_loss_plot(result.records, Path(out_dir) / LOSS_LOG_NAME)
    return result


def write_alignment(alignment, path):
    path = Path(path)
    matrix = AlignmentMatrix(alignment)
    if path.suffix.lower() == ".pgm":
        write_alignment_pgm(matrix, path)
    else:
        write_alignment_csv(matrix, path)


def load_flow(path):
    ckpt = load_checkpoint(path)
    if ckpt.meta.get("kind") != FLOW_KIND:
        raise ConfigError(f"{path} is not a flow vocoder checkpoint")
    return FlowConfig(**ckpt.meta["flow_cfg"]), ckpt.tensors


def synthesize(ctx, ckpt_path, text, out_wav, vocoder="griffinlim", flow_ckpt=None,
               gl_iters=60, alignment_out=()):
    """Text to WAV through a trained checkpoint; returns the DecoderOutput."""
    if vocoder not in VOCODERS:
        raise ConfigError(f"unknown vocoder '{vocoder}'")
    if vocoder == "flow" and not flow_ckpt:
        raise ConfigError("--vocoder flow needs --flow-ckpt")
    if vocoder == "griffinlim" and gl_iters < 1:
        raise ConfigError("--gl-iters must be >= 1")
    ckpt = load_checkpoint(ckpt_path)
    model_cfg = ckpt.model_config
    model = TacoModel.from_parameters(ckpt.parameters(), model_cfg)
    symbols = normalize_text(text, ckpt.symbol_table)
    output = infer(symbols, model, seed=ctx.seed)
    logger.info("Decoded %d frames (%s)", output.n_frames, output.stop_reason.value)

    prep_rate = ctx.file_config.get("prep", {}).get("rate")
    feature_cfg = ctx.feature_config(prep_rate)
    if feature_cfg.n_mels != model_cfg.n_mels:
        raise ConfigError(
            f"features.n_mels is {feature_cfg.n_mels} but the model predicts {model_cfg.n_mels}"
        )
    values = output.mel_after.detach().double().numpy()
    mel = MelSpectrogram(np.maximum(values, np.log(feature_cfg.log_floor)), feature_cfg)

    if vocoder == "flow":
        flow_cfg, flow_params = load_flow(flow_ckpt)
        clip = flow_synthesize(mel, flow_params, flow_cfg, seed=ctx.seed)
    else:
        clip = griffin_lim(mel, gl_iters, feature_cfg)
    write_wav(clip, out_wav)

    if isinstance(alignment_out, (str, Path)):
        alignment_out = (alignment_out,)
    for path in alignment_out:
        write_alignment(output.alignment.detach().double().numpy(), path)
    return output


class ModelCommands:
    """Registers the model subcommands and runs them."""

    def register(self, subparsers, parents):
        train = subparsers.add_parser("train", parents=parents, help="train the spectrogram model")
        train.add_argument("--manifest", required=True, help="manifest file (metadata.tsv)")
        train.add_argument("--features", required=True, help="feature cache directory")
        train.add_argument("--out", dest="out_dir", required=True, help="checkpoint directory")
        train.add_argument("--symbols", help="symbol table (default: symbols.json beside the manifest)")
        train.add_argument("--warm-start", help="pretrained checkpoint to transfer from")
        train.add_argument("--epochs", type=int, help="number of epochs (default 430)")
        train.add_argument("--max-iterations", type=int, help="stop after this many iterations")
        train.add_argument("--batch-size", type=int, help="batch size (default 8)")
        train.add_argument("--lr", type=float, help="initial learning rate (default 4e-5)")
        train.add_argument("--gate-threshold", type=float, help="stop-gate threshold (default 0.4)")
        train.add_argument("--decoder-dropout", type=float, help="decoder dropout (default 0.4)")
        train.add_argument("--attention-dropout", type=float, help="attention dropout (default 0.4)")
        train.set_defaults(handler=self.train)

        surgery_parser = subparsers.add_parser(
            "surgery", parents=parents, help="warm-start a checkpoint for a new symbol table"
        )
        surgery_parser.add_argument("--src", required=True, help="pretrained checkpoint")
        surgery_parser.add_argument("--symbols", required=True, help="target symbol table (symbols.json)")
        surgery_parser.add_argument("--out", dest="out_path", help="output checkpoint")
        surgery_parser.add_argument("--exclude", action="append", metavar="PREFIX",
                                    help="tensor name prefix to leave out (repeatable)")
        surgery_parser.add_argument("--report", action="store_true",
                                    help="print the per-tensor plan instead of writing a checkpoint")
        surgery_parser.set_defaults(handler=self.surgery)

        synth = subparsers.add_parser("synth", parents=parents, help="synthesize a WAV from text")
        synth.add_argument("--ckpt", required=True, help="trained model checkpoint")
        synth.add_argument("--text", required=True, help="Devanagari text to speak")
        synth.add_argument("--out", dest="out_wav", required=True, help="output WAV file")
        synth.add_argument("--vocoder", choices=VOCODERS, default="griffinlim", help="waveform generator")
        synth.add_argument("--flow-ckpt", help="flow vocoder checkpoint for --vocoder flow")
        synth.add_argument("--gl-iters", type=int, default=60, help="Griffin-Lim iterations (default 60)")
        synth.add_argument("--alignment-out", help="write the attention alignment (.csv or .pgm)")
        synth.set_defaults(handler=self.synth)

        flow = subparsers.add_parser("flow-fit", parents=parents, help="fit the toy flow vocoder to a WAV")
        flow.add_argument("--wav", required=True, help="training recording")
        flow.add_argument("--out", dest="out_path", required=True, help="output flow checkpoint")
        flow.add_argument("--steps", type=int, default=100, help="optimizer steps (default 100)")
        flow.add_argument("--lr", type=float, default=1e-3, help="learning rate (default 1e-3)")
        flow.set_defaults(handler=self.flow_fit)

    def train(self, args, ctx):
        result = train_model(
            ctx, args.manifest, args.features, args.out_dir,
            symbols_path=args.symbols,
            warm_start=args.warm_start,
            model_overrides={
                "gate_threshold": args.gate_threshold,
                "decoder_dropout": args.decoder_dropout,
                "attention_dropout": args.attention_dropout,
            },
            train_overrides={
                "epochs": args.epochs,
                "max_iterations": args.max_iterations,
                "batch_size": args.batch_size,
            },
            adam_overrides={"lr": args.lr},
        )
        last = result.records[-1]
        ctx.echo(f"iterations={last.iteration}")
        ctx.echo(f"final_train_loss={last.train_loss!r}")
        ctx.echo(f"out={args.out_dir}")

    def surgery(self, args, ctx):
        src = load_checkpoint(args.src)
        table = load_symbols(args.symbols)
        target_cfg = dataclasses.replace(src.model_config, vocab_size=len(table))
        overrides = {"seed": ctx.seed}
        if args.exclude:
            overrides["exclude_name_prefixes"] = tuple(args.exclude)
        spec = ctx.section(TransferSpec(), "transfer", overrides)

        if args.report:
            report = compat_report(src, target_cfg, spec, table)
            ctx.echo(report.render())
            ctx.echo(f"compatible={report.compatible}")
            return
        if not args.out_path:
            raise ConfigError("surgery needs --out unless --report is given")
        params = surgery(src, table, spec, target_cfg)
        save_checkpoint(Checkpoint.build(target_cfg, table, params, seed=spec.seed), args.out_path)
        ctx.echo(f"tensors={len(params)}")
        ctx.echo(f"out={args.out_path}")

    def synth(self, args, ctx):
        output = synthesize(
            ctx, args.ckpt, args.text, args.out_wav,
            vocoder=args.vocoder, flow_ckpt=args.flow_ckpt, gl_iters=args.gl_iters,
            alignment_out=args.alignment_out or (),
        )
        ctx.echo(f"frames={output.n_frames}")
        ctx.echo(f"stop_reason={output.stop_reason.value}")
        ctx.echo(f"out={args.out_wav}")

    def flow_fit(self, args, ctx):
        if args.steps < 0 or not args.lr > 0:
            raise ConfigError("--steps must be >= 0 and --lr positive")
        clip = read_wav(args.wav)
        feature_cfg = ctx.feature_config(clip.sample_rate_hz)
        mel = mel_spectrogram(clip, feature_cfg)
        flow_cfg = ctx.section(
            FlowConfig(mel_cond_dim=feature_cfg.n_mels, hop=feature_cfg.hop), "flow"
        )
        params = init_flow_params(flow_cfg, seed=ctx.seed)
        groups = group_audio(clip.samples, flow_cfg.group_size)
        params, history = fit_flow(groups, mel.values, params, flow_cfg, steps=args.steps, lr=args.lr)
        meta = {"kind": FLOW_KIND, "flow_cfg": flow_cfg.to_dict(), "seed": ctx.seed}
        save_checkpoint(Checkpoint(meta=meta, tensors=params), args.out_path)
        if history:
            ctx.echo(f"nll_start={history[0]!r}")
            ctx.echo(f"nll_end={history[-1]!r}")
        ctx.echo(f"out={args.out_path}")
