"""
Tests for the lowres-tts command line: parsing, exit codes and command output.
"""

import io
import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.audio import AudioClip, write_wav
from lowres_tts.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from lowres_tts.cli import build_parser, dispatch
from lowres_tts.corpus import MANIFEST_NAME, SYMBOLS_NAME, ManifestEntry, corpus_rate, write_manifest
from lowres_tts.evaluation import AlignmentMatrix, write_alignment_pgm
from lowres_tts.model import TacoModel
from lowres_tts.text import SymbolTable

DOCUMENTED_FLAGS = {
    "prep": ["--in", "--out", "--rate", "--max-silence", "--max-chunk", "--no-trim"],
    "stats": ["--manifest"],
    "features": ["--manifest", "--out"],
    "train": [
        "--manifest", "--features", "--out", "--warm-start", "--epochs", "--max-iterations",
        "--batch-size", "--lr", "--gate-threshold", "--decoder-dropout", "--attention-dropout",
    ],
    "surgery": ["--src", "--symbols", "--out", "--exclude", "--report"],
    "synth": ["--ckpt", "--text", "--out", "--vocoder", "--flow-ckpt", "--gl-iters", "--alignment-out"],
    "flow-fit": ["--wav", "--out", "--steps", "--lr"],
    "align-score": ["--alignment", "--band"],
    "mos": ["--scores", "--confidence", "--invert", "--n", "--half-width"],
    "experiment": ["--seeds", "--cap"],
    "pipeline": ["--in", "--out", "--text"],
}
GLOBAL_FLAGS = ["--seed", "--verbose", "--config"]


def run(*argv):
    """Dispatch a command line and return ``(exit_code, stdout_text)``."""
    out = io.StringIO()
    code = dispatch(list(argv), stdout=out)
    return code, out.getvalue()


@pytest.fixture
def manifest_dir(tmp_path, tone):
    """Two short utterances with a manifest and symbol table, no features."""
    (tmp_path / "wavs").mkdir()
    entries = []
    for name, text, seconds in (("u_000", "क ख", 0.5), ("u_001", "ख ग", 0.7)):
        write_wav(AudioClip(tone(440, seconds), 22050), tmp_path / "wavs" / f"{name}.wav")
        entries.append(ManifestEntry(f"wavs/{name}.wav", text, seconds))
    write_manifest(entries, tmp_path / MANIFEST_NAME)
    SymbolTable(["क", "ख", "ग", " "]).save(tmp_path / SYMBOLS_NAME)
    return tmp_path


@pytest.mark.parametrize("command", sorted(DOCUMENTED_FLAGS))
def test_help_lists_every_flag(command, capsys):
    """Each subcommand's help mentions its own and the global flags."""
    assert dispatch([command, "--help"]) == 0
    text = capsys.readouterr().out
    for flag in DOCUMENTED_FLAGS[command] + GLOBAL_FLAGS:
        assert flag in text, flag


def test_top_level_help_lists_commands(capsys):
    """The program help names every subcommand."""
    assert dispatch(["--help"]) == 0
    text = capsys.readouterr().out
    for command in DOCUMENTED_FLAGS:
        assert command in text


def test_help_round_trips_through_parser():
    """Every documented flag is accepted by the parser it is listed in."""
    parser = build_parser()
    args = parser.parse_args(["mos", "--invert", "--n", "37", "--half-width", "0.33", "--seed", "4"])
    assert args.n == 37 and args.seed == 4
    args = parser.parse_args(["surgery", "--src", "a", "--symbols", "b", "--exclude", "x.", "--exclude", "y."])
    assert args.exclude == ["x.", "y."]


def test_unknown_flag_is_a_usage_error(capsys):
    """Unrecognized flags exit 2 with usage on stderr."""
    assert dispatch(["stats", "--manifest", "m.tsv", "--bogus"]) == 2
    assert "usage:" in capsys.readouterr().err


def test_missing_command_is_a_usage_error(capsys):
    """A bare invocation is a usage error."""
    assert dispatch([]) == 2
    capsys.readouterr()


def test_stats_prints_both_blocks(manifest_dir):
    """stats on a two-entry manifest exits 0 with the table and key=value lines."""
    code, out = run("stats", "--manifest", str(manifest_dir / MANIFEST_NAME))
    assert code == 0
    assert "num_utterances=2" in out
    assert "word_vocab_size=3" in out


def test_train_without_features(manifest_dir, capsys):
    """A missing feature cache exits 1 with a single coded line."""
    code, _ = run(
        "train", "--manifest", str(manifest_dir / MANIFEST_NAME),
        "--features", str(manifest_dir / "features"), "--out", str(manifest_dir / "ckpt"),
    )
    assert code == 1
    err = capsys.readouterr().err.strip().splitlines()
    assert err[-1].startswith("E_FEATURES_MISSING: ")


def test_mos_invert():
    """The rater spread implied by a reported interval is printed."""
    code, out = run("mos", "--invert", "--n", "37", "--half-width", "0.33")
    assert code == 0
    value = float(out.strip().split("=")[1])
    assert value == pytest.approx(0.99, abs=0.01)


def test_mos_invert_needs_arguments(capsys):
    """--invert without --n is a configuration error."""
    code, _ = run("mos", "--invert", "--half-width", "0.33")
    assert code == 1
    assert capsys.readouterr().err.startswith("E_CONFIG: ")


def test_mos_report_from_csv(tmp_path):
    """Both dimensions and the overall row are printed."""
    path = tmp_path / "scores.csv"
    rows = ["rater_id,utterance_id,dimension,score"]
    for rater, scores in (("r1", (4, 3)), ("r2", (5, 4)), ("r3", (3, 3))):
        rows.append(f"{rater},u1,naturalness,{scores[0]}")
        rows.append(f"{rater},u1,pronunciation,{scores[1]}")
    path.write_text("\n".join(rows) + "\n", encoding="utf-8")
    code, out = run("mos", "--scores", str(path))
    assert code == 0
    assert "naturalness" in out and "pronunciation" in out and "Overall" in out


def test_align_score(tmp_path):
    """A diagonal image scores 1."""
    path = tmp_path / "a.pgm"
    write_alignment_pgm(AlignmentMatrix(np.eye(10)), path)
    code, out = run("align-score", "--alignment", str(path), "--band", "0.1")
    assert code == 0
    assert "diagonality=1.000000" in out


def test_unknown_config_section(tmp_path, manifest_dir, capsys):
    """Config files are validated before any command runs."""
    config = tmp_path / "bad.toml"
    config.write_text("[nonsense]\nx = 1\n", encoding="utf-8")
    code, _ = run("stats", "--manifest", str(manifest_dir / MANIFEST_NAME), "--config", str(config))
    assert code == 1
    assert capsys.readouterr().err.startswith("E_CONFIG: ")


def test_pipeline_requires_config(tmp_path, capsys):
    """The pipeline refuses to run on built-in defaults alone."""
    code, _ = run("pipeline", "--in", str(tmp_path), "--out", str(tmp_path / "run"))
    assert code == 1
    assert capsys.readouterr().err.startswith("E_CONFIG: ")


def test_surgery_report_and_write(tmp_path, toy_config, capsys):
    """--report prints the plan; without it the transplanted checkpoint is written."""
    source_table = SymbolTable(list("abcdefgh"))
    cfg = toy_config(len(source_table))
    src = tmp_path / "src.lrtt"
    save_checkpoint(Checkpoint.build(cfg, source_table, TacoModel(cfg, seed=0).parameters_map()), src)
    target_table = SymbolTable(["क", "ख", "ग"])
    target_table.save(tmp_path / SYMBOLS_NAME)

    code, out = run("surgery", "--src", str(src), "--symbols", str(tmp_path / SYMBOLS_NAME), "--report")
    assert code == 0
    assert "compatible=True" in out
    assert "REINIT" in out

    code, out = run(
        "surgery", "--src", str(src), "--symbols", str(tmp_path / SYMBOLS_NAME),
        "--out", str(tmp_path / "warm.lrtt"),
    )
    assert code == 0
    warm = load_checkpoint(tmp_path / "warm.lrtt")
    assert warm.model_config.vocab_size == len(target_table)
    assert not warm.has_optimizer_state()


def test_surgery_needs_out_without_report(tmp_path, toy_config, capsys):
    """Writing mode requires --out."""
    table = SymbolTable(list("abc"))
    cfg = toy_config(len(table))
    src = tmp_path / "src.lrtt"
    save_checkpoint(Checkpoint.build(cfg, table, TacoModel(cfg, seed=0).parameters_map()), src)
    table.save(tmp_path / SYMBOLS_NAME)
    code, _ = run("surgery", "--src", str(src), "--symbols", str(tmp_path / SYMBOLS_NAME))
    assert code == 1
    assert capsys.readouterr().err.startswith("E_CONFIG: ")


@pytest.mark.parametrize("argv", [
    ["mos", "--invert", "--n", "37", "--half-width", "0.33", "--confidence", "1.5"],
    ["mos", "--invert", "--n", "1", "--half-width", "0.33"],
    ["align-score", "--alignment", "a.pgm", "--band", "0"],
    ["synth", "--ckpt", "missing.lrtt", "--text", "क", "--out", "o.wav", "--gl-iters", "0"],
    ["synth", "--ckpt", "missing.lrtt", "--text", "क", "--out", "o.wav", "--vocoder", "flow"],
    ["flow-fit", "--wav", "missing.wav", "--out", "f.lrtt", "--lr", "0"],
])
def test_out_of_range_flags_are_config_errors(argv, capsys):
    """Numeric flags are checked before any file is read."""
    code, out = run(*argv)
    assert code == 1
    assert out == ""
    assert capsys.readouterr().err.startswith("E_CONFIG: ")


def test_features_follow_the_prep_rate(recordings_dir, tmp_path):
    """A --rate given only to prep is picked up by features from the corpus."""
    corpus = tmp_path / "corpus"
    code, out = run("prep", "--in", str(recordings_dir), "--out", str(corpus), "--rate", "8000")
    assert code == 0, out
    assert corpus_rate(corpus) == 8000

    code, out = run("features", "--manifest", str(corpus / MANIFEST_NAME), "--out", str(tmp_path / "features"))
    assert code == 0, out
    assert "features=3" in out
