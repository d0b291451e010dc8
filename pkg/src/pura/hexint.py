"""Canonical hex form for big integers in files and wire payloads.

Lowercase, minimal length (no leading zeros), no prefix; the value zero is
the single digit "0".  Readers reject anything non-canonical so that two
encodings of the same object are always byte-identical.
"""

import re

_CANON = re.compile(r"0|[1-9a-f][0-9a-f]*")


def to_hex(value: int) -> str:
    if value < 0:
        raise ValueError("negative values have no canonical hex form")
    return format(value, "x")


def from_hex(text: str) -> int:
    if not isinstance(text, str) or not _CANON.fullmatch(text):
        raise ValueError(f"non-canonical hex integer: {text!r}")
    return int(text, 16)
