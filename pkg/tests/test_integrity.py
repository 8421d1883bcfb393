"""
Tests for SHA-256 digests and run-directory listings.
"""

import os
import sys

sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), "..")))

from lowres_tts.integrity import DigestManager, sha256_bytes, sha256_file

ABC_DIGEST = "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
EMPTY_DIGEST = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"


def test_known_digests():
    """Digests match the published SHA-256 test vectors."""
    assert sha256_bytes(b"abc") == ABC_DIGEST
    assert sha256_bytes(b"") == EMPTY_DIGEST


def test_file_digest_matches_bytes(tmp_path):
    """Chunked file hashing agrees with hashing the bytes at once."""
    data = os.urandom(3 * (1 << 20) + 17)
    path = tmp_path / "blob.bin"
    path.write_bytes(data)
    assert sha256_file(path) == sha256_bytes(data)


def _make_run(root):
    (root / "synth").mkdir(parents=True)
    (root / ".stamps").mkdir()
    (root / "synth" / "sample.wav").write_bytes(b"abc")
    (root / "RUNFMT").write_text("1\n", encoding="utf-8")
    (root / ".stamps" / "prep").write_text("done\n", encoding="utf-8")


def test_digest_tree_skips_stamps(tmp_path):
    """Stamp files never appear in the listing."""
    _make_run(tmp_path)
    listing = DigestManager(tmp_path).digest_tree()
    assert list(listing) == ["RUNFMT", "synth/sample.wav"]
    assert listing["synth/sample.wav"] == ABC_DIGEST


def test_write_listing(tmp_path):
    """The listing file holds one digest line per file and is excluded on rewrite."""
    _make_run(tmp_path)
    manager = DigestManager(tmp_path)
    first = manager.write_listing()
    lines = (tmp_path / "DIGESTS").read_text(encoding="utf-8").splitlines()
    assert lines[1] == f"{ABC_DIGEST}  synth/sample.wav"
    assert manager.write_listing() == first


def test_same_content_same_listing(tmp_path):
    """Two directories with equal files produce equal listings."""
    _make_run(tmp_path / "a")
    _make_run(tmp_path / "b")
    (tmp_path / "b" / ".stamps" / "features").write_text("done\n", encoding="utf-8")
    assert DigestManager(tmp_path / "a").digest_tree() == DigestManager(tmp_path / "b").digest_tree()
