"""Byte-level tokenization over a fixed 260-symbol alphabet.

Token ids 0-255 are raw UTF-8 byte values, so every label string a model
could ever invent is representable without a learned vocabulary.  The four
special ids sit above the byte range:

    256 = PAD   257 = BOS   258 = EOS   259 = SEP
"""

from __future__ import annotations

PAD = 256
BOS = 257
EOS = 258
SEP = 259
VOCAB_SIZE = 260

SPECIAL_TOKENS = {"pad": PAD, "bos": BOS, "eos": EOS, "sep": SEP}

TokenSeq = tuple[int, ...]


def is_byte(token: int) -> bool:
    return 0 <= token <= 255


def encode_label(label: str) -> TokenSeq:
    """Encode a label as its UTF-8 bytes.  Injective; no specials appear."""
    if not label:
        raise ValueError("label must be non-empty")
    if "\n" in label:
        raise ValueError("label must not contain newlines")
    return tuple(label.encode("utf-8"))


def encode_text(text: str, max_len: int) -> TokenSeq:
    """UTF-8 bytes truncated to max_len, with BOS prepended.  No padding."""
    if max_len < 1:
        raise ValueError("max_len must be positive")
    return (BOS,) + tuple(text.encode("utf-8")[:max_len])


def decode(tokens: TokenSeq) -> str:
    """Decode byte tokens to a string, replacing invalid UTF-8 sequences."""
    return bytes(tokens).decode("utf-8", errors="replace")
