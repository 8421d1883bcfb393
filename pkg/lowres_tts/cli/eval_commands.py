"""
Evaluation commands: align-score, mos and experiment.
"""

import logging

from lowres_tts.config import ConfigError
from lowres_tts.evaluation import (
    DIMENSIONS,
    diagonality,
    implied_sd,
    mos_report,
    overall_report,
    parse_mos_csv,
    read_alignment,
    render_mos,
)
from lowres_tts.experiments import run_experiment

logger = logging.getLogger(__name__)

EXPERIMENTS = ("preprocessing", "transfer")


class EvalCommands:
    """Registers the evaluation subcommands and runs them."""

    def register(self, subparsers, parents):
        align = subparsers.add_parser(
            "align-score", parents=parents, help="diagonality of an attention alignment"
        )
        align.add_argument("--alignment", required=True, help="alignment file (.csv or .pgm)")
        align.add_argument("--band", type=float, default=0.15, help="diagonal band half-width (default 0.15)")
        align.set_defaults(handler=self.align_score)

        mos = subparsers.add_parser("mos", parents=parents, help="MOS report with t-distribution intervals")
        mos.add_argument("--scores", help="CSV rater_id,utterance_id,dimension,score")
        mos.add_argument("--confidence", type=float, default=0.95, help="interval confidence (default 0.95)")
        mos.add_argument("--invert", action="store_true",
                         help="print the rater s.d. implied by --n and --half-width")
        mos.add_argument("--n", type=int, help="number of raters for --invert")
        mos.add_argument("--half-width", type=float, help="reported interval half-width for --invert")
        mos.set_defaults(handler=self.mos)

        experiment = subparsers.add_parser(
            "experiment", parents=parents, help="run a desk-scale convergence comparison"
        )
        experiment.add_argument("name", choices=EXPERIMENTS, help="which comparison to run")
        experiment.add_argument("--seeds", type=int, default=3, help="number of seeds (default 3)")
        experiment.add_argument("--cap", type=int, default=3000, help="iteration cap (default 3000)")
        experiment.set_defaults(handler=self.experiment)

    def align_score(self, args, ctx):
        if not 0 < args.band <= 1:
            raise ConfigError("--band must lie in (0, 1]")
        score = diagonality(read_alignment(args.alignment), args.band)
        ctx.echo(f"band={args.band}")
        ctx.echo(f"diagonality={score:.6f}")

    def mos(self, args, ctx):
        if not 0 < args.confidence < 1:
            raise ConfigError("--confidence must lie in (0, 1)")
        if args.invert:
            if args.n is None or args.half_width is None:
                raise ConfigError("--invert needs --n and --half-width")
            if args.n < 2 or args.half_width < 0:
                raise ConfigError("--invert needs --n >= 2 and a non-negative --half-width")
            ctx.echo(f"implied_sd={implied_sd(args.n, args.half_width, args.confidence):.4f}")
            return
        if not args.scores:
            raise ConfigError("mos needs --scores (or --invert)")

        samples = parse_mos_csv(args.scores)
        present = [d for d in DIMENSIONS if any(s.dimension == d for s in samples)]
        reports = [mos_report(samples, args.confidence, dimension) for dimension in present]
        overall = overall_report(reports) if len(reports) > 1 else None
        ctx.echo(render_mos(reports, overall))

    def experiment(self, args, ctx):
        if args.seeds < 1 or args.cap < 1:
            raise ConfigError("--seeds and --cap must be >= 1")
        result = run_experiment(args.name, seeds=args.seeds, cap=args.cap)
        ctx.echo(result.render())
