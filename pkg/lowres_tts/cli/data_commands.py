"""
Corpus commands: prep, stats and features.
"""

import logging
from pathlib import Path

from lowres_tts.corpus import (
    MANIFEST_NAME,
    PrepConfig,
    VadConfig,
    corpus_stats,
    prepare_corpus,
    read_manifest,
    render_stats,
)
from lowres_tts.features import extract_features

logger = logging.getLogger(__name__)


class DataCommands:
    """Registers the corpus subcommands and runs them."""

    def register(self, subparsers, parents):
        prep = subparsers.add_parser(
            "prep", parents=parents,
            help="resample, trim and segment <stem>.wav + <stem>.txt pairs into a manifest",
        )
        prep.add_argument("--in", dest="in_dir", required=True, help="directory of WAV/TXT pairs")
        prep.add_argument("--out", dest="out_dir", required=True, help="output corpus directory")
        prep.add_argument("--rate", type=int, help="target sample rate in Hz (default 22050)")
        prep.add_argument("--max-silence", type=float,
                          help="cap for interior silences in seconds (default 0.5)")
        prep.add_argument("--max-chunk", type=float, help="longest output piece in seconds (default 10)")
        prep.add_argument("--no-trim", action="store_true", help="skip silence trimming")
        prep.set_defaults(handler=self.prep)

        stats = subparsers.add_parser("stats", parents=parents, help="print corpus statistics")
        stats.add_argument("--manifest", required=True, help="manifest file (metadata.tsv)")
        stats.set_defaults(handler=self.stats)

        features = subparsers.add_parser(
            "features", parents=parents, help="cache log-mel spectrograms for a manifest"
        )
        features.add_argument("--manifest", required=True, help="manifest file (metadata.tsv)")
        features.add_argument("--out", dest="out_dir", required=True, help="feature cache directory")
        features.set_defaults(handler=self.features)

    def prep(self, args, ctx):
        prep_overrides = {"rate": args.rate, "max_chunk_sec": args.max_chunk}
        if args.no_trim:
            prep_overrides["trim"] = False
        prep_cfg = ctx.section(PrepConfig(), "prep", prep_overrides)
        vad_cfg = ctx.section(VadConfig(), "vad", {"max_internal_silence_sec": args.max_silence})

        summary = prepare_corpus(args.in_dir, args.out_dir, prep_cfg, vad_cfg)
        ctx.echo(f"utterances={len(summary.entries)}")
        ctx.echo(f"skipped={len(summary.skipped)}")
        ctx.echo(f"symbols={len(summary.table.symbols)}")
        ctx.echo(f"manifest={Path(args.out_dir) / MANIFEST_NAME}")
        for name, reason in summary.skipped:
            ctx.echo(f"skipped_file={name} reason={reason}")

    def stats(self, args, ctx):
        ctx.echo(render_stats(corpus_stats(read_manifest(args.manifest))))

    def features(self, args, ctx):
        manifest = Path(args.manifest)
        entries = read_manifest(manifest)
        cfg = ctx.corpus_feature_config(manifest)
        paths = extract_features(entries, manifest.parent, args.out_dir, cfg)
        ctx.echo(f"features={len(paths)}")
        ctx.echo(f"out={args.out_dir}")
