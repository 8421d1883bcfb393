"""
Text module for the lowres-tts toolkit.
Canonicalizes Devanagari transcripts and maps them to symbol ids.
"""

import re
import json
import logging
import unicodedata
from dataclasses import dataclass

from lowres_tts.errors import TTSError

logger = logging.getLogger(__name__)

PAD_ID = 0
EOS_RENDER = "⏎"  # ⏎
DANDA = "।"
DOUBLE_DANDA = "॥"

_SENTENCE_BREAK = re.compile(f"[{DANDA}{DOUBLE_DANDA}]")


def clean_text(raw):
    """Canonical composition, punctuation/control removal, whitespace collapse.

    Returns the transcript string the model is trained on (without EOS).
    """
    composed = unicodedata.normalize("NFC", raw)
    kept = []
    for ch in composed:
        if ch.isspace():
            kept.append(" ")
            continue
        category = unicodedata.category(ch)
        if category.startswith("P") or category.startswith("C"):
            continue
        kept.append(ch)
    return " ".join("".join(kept).split())


def split_sentences(raw):
    """Split a transcript at danda / double danda, dropping empty pieces."""
    pieces = (piece.strip() for piece in _SENTENCE_BREAK.split(raw))
    return [piece for piece in pieces if piece]


@dataclass(frozen=True)
class SymbolSequence:
    """Symbol ids of one transcript; the last id is always EOS."""

    ids: tuple
    eos_id: int

    def __post_init__(self):
        if not self.ids or self.ids[-1] != self.eos_id:
            raise ValueError("symbol sequence must end with EOS")
        if self.ids.count(self.eos_id) != 1:
            raise ValueError("EOS must appear exactly once")

    def __len__(self):
        return len(self.ids)


class SymbolTable:
    """Bijective map between codepoints and ids.

    Id 0 is padding, ids 1..n are the symbols in order, the last id is EOS.
    """

    def __init__(self, symbols):
        symbols = list(symbols)
        for symbol in symbols:
            if not isinstance(symbol, str) or len(symbol) != 1:
                raise InvalidSymbolTable(f"symbols must be single codepoints, got {symbol!r}")
        if len(set(symbols)) != len(symbols):
            raise InvalidSymbolTable("symbol table contains duplicate codepoints")
        self.symbols = tuple(symbols)
        self._ids = {symbol: index + 1 for index, symbol in enumerate(self.symbols)}

    def __len__(self):
        return len(self.symbols) + 2

    def __eq__(self, other):
        return isinstance(other, SymbolTable) and self.symbols == other.symbols

    def __repr__(self):
        return f"SymbolTable({len(self.symbols)} symbols)"

    @property
    def eos_id(self):
        return len(self.symbols) + 1

    def id_of(self, symbol):
        try:
            return self._ids[symbol]
        except KeyError:
            raise UnknownSymbol(symbol) from None

    def symbol_of(self, symbol_id):
        if symbol_id == PAD_ID:
            return ""
        if symbol_id == self.eos_id:
            return EOS_RENDER
        if not 0 < symbol_id < self.eos_id:
            raise UnknownSymbol(f"id {symbol_id}")
        return self.symbols[symbol_id - 1]

    def render(self, ids):
        """Text dump of an id sequence, EOS shown as ⏎."""
        return "".join(self.symbol_of(int(i)) for i in ids)

    @classmethod
    def from_texts(cls, texts):
        """Character table covering every cleaned transcript in ``texts``."""
        chars = set()
        for text in texts:
            chars.update(clean_text(text))
        return cls(sorted(chars))

    @classmethod
    def devanagari(cls):
        """Every assigned, NFC-stable, non-punctuation codepoint of the Devanagari block, plus space."""
        symbols = [" "]
        for codepoint in range(0x0900, 0x0980):
            ch = chr(codepoint)
            category = unicodedata.category(ch)
            if category.startswith("P") or category.startswith("C"):
                continue
            if unicodedata.normalize("NFC", ch) != ch:
                continue
            symbols.append(ch)
        return cls(symbols)

    def to_json(self):
        return json.dumps(list(self.symbols), ensure_ascii=False)

    @classmethod
    def from_json(cls, payload):
        try:
            return cls(json.loads(payload))
        except (json.JSONDecodeError, TypeError) as e:
            raise InvalidSymbolTable(f"cannot parse symbol table: {e}") from e

    def save(self, path):
        with open(path, "w", encoding="utf-8") as handle:
            handle.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        try:
            with open(path, "r", encoding="utf-8") as handle:
                return cls.from_json(handle.read())
        except OSError as e:
            raise InvalidSymbolTable(f"cannot read symbol table {path}: {e}") from e


def normalize_text(raw, table):
    """Turn a raw transcript into model input ids with a single trailing EOS."""
    if raw is None or not raw.strip():
        raise EmptyText("transcript is empty")
    cleaned = clean_text(raw)
    if not cleaned:
        raise EmptyText(f"transcript {raw!r} has no pronounceable symbols")
    ids = [table.id_of(ch) for ch in cleaned]
    ids.append(table.eos_id)
    return SymbolSequence(tuple(ids), table.eos_id)


class EmptyText(TTSError):
    """Raised when a transcript is empty or reduces to nothing."""

    code = "E_EMPTY_TEXT"


class UnknownSymbol(TTSError):
    """Raised when a codepoint (or id) is missing from the symbol table."""

    code = "E_UNKNOWN_SYMBOL"

    def __init__(self, symbol):
        self.symbol = symbol
        if isinstance(symbol, str) and len(symbol) == 1:
            message = f"U+{ord(symbol):04X} {symbol!r} is not in the symbol table"
        else:
            message = f"{symbol} is not in the symbol table"
        super().__init__(message)


class InvalidSymbolTable(TTSError):
    """Raised when a symbol table listing is malformed."""

    code = "E_SYMBOL_TABLE"
