"""
Integrity module for the lowres-tts toolkit.
Computes SHA-256 digests for checkpoint payloads and run directories.
"""

import os
import logging
from pathlib import Path

from cryptography.hazmat.primitives import hashes

logger = logging.getLogger(__name__)

_CHUNK_SIZE = 1 << 20

# Files that describe a run rather than belong to it
_EXCLUDED_NAMES = {"DIGESTS"}


def sha256_bytes(data):
    """Return the hex SHA-256 digest of a bytes object."""
    digest = hashes.Hash(hashes.SHA256())
    digest.update(bytes(data))
    return digest.finalize().hex()


def sha256_file(path):
    """Return the hex SHA-256 digest of a file, read in chunks."""
    digest = hashes.Hash(hashes.SHA256())
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(_CHUNK_SIZE), b""):
            digest.update(chunk)
    return digest.finalize().hex()


class DigestManager:
    """Digests every file below a run directory.

    Stamp files and the digest listing itself are skipped, so two runs with the
    same config and seed produce identical listings.
    """

    def __init__(self, root, skip_dirs=(".stamps",)):
        self.root = Path(root)
        self.skip_dirs = set(skip_dirs)

    def _iter_files(self):
        for dirpath, dirnames, filenames in os.walk(self.root):
            # Walk in sorted order so the listing is stable
            dirnames[:] = sorted(d for d in dirnames if d not in self.skip_dirs)
            for name in sorted(filenames):
                if name in _EXCLUDED_NAMES:
                    continue
                yield Path(dirpath) / name

    def digest_tree(self):
        """Map each relative file path (POSIX form) to its SHA-256 digest."""
        listing = {}
        for path in self._iter_files():
            listing[path.relative_to(self.root).as_posix()] = sha256_file(path)
        return listing

    def write_listing(self, out_name="DIGESTS"):
        """Write ``<digest>  <relpath>`` lines and return the listing."""
        listing = self.digest_tree()
        out_path = self.root / out_name
        with open(out_path, "w", encoding="utf-8", newline="\n") as handle:
            for rel_path, digest in listing.items():
                handle.write(f"{digest}  {rel_path}\n")
        logger.info("Wrote %d digests to %s", len(listing), out_path)
        return listing
