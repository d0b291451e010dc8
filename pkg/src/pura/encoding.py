"""Plaintext encodings used throughout the system.

Three concerns live here:

* mapping signed integers into the residue ring ``Z_n`` and back,
* quantising real-valued feature vectors to fixed-point integers,
* reading and writing the feature-vector CSV format.

The signed encoding is the usual complement mapping: a non-negative
value ``x`` is stored as itself, a negative value as ``n + x``.  Both
directions are guarded by an explicit magnitude bound so that a
corrupted or out-of-contract value surfaces as a :class:`RangeError`
instead of silently wrapping.
"""

from __future__ import annotations

import csv
import math
import os
from typing import Iterable, List, Sequence, Tuple

from .errors import DomainError, RangeError
from .params import QUANT_SCALE

__all__ = [
    "encode_signed",
    "decode_signed",
    "quantize",
    "quantize_vector",
    "read_feature_csv",
    "write_feature_csv",
]


def encode_signed(value: int, n: int, magnitude_bound: int) -> int:
    """Map a signed integer into ``Z_n``.

    ``value`` must satisfy ``|value| <= magnitude_bound``, and the bound
    itself must leave the positive and negative ranges disjoint
    (``2 * magnitude_bound < n``).
    """
    if magnitude_bound <= 0:
        raise DomainError("magnitude bound must be positive")
    if 2 * magnitude_bound >= n:
        raise DomainError("magnitude bound too large for modulus")
    if abs(value) > magnitude_bound:
        raise RangeError(
            "value %d exceeds magnitude bound %d" % (value, magnitude_bound)
        )
    return value % n


def decode_signed(residue: int, n: int, magnitude_bound: int) -> int:
    """Invert :func:`encode_signed`.

    Residues in ``[0, magnitude_bound]`` decode as non-negative values,
    residues in ``[n - magnitude_bound, n)`` as negative ones.  Anything
    in between is outside the signed window and raises
    :class:`RangeError`.
    """
    if magnitude_bound <= 0:
        raise DomainError("magnitude bound must be positive")
    if 2 * magnitude_bound >= n:
        raise DomainError("magnitude bound too large for modulus")
    if not 0 <= residue < n:
        raise RangeError("residue out of ring range")
    if residue <= magnitude_bound:
        return residue
    if residue >= n - magnitude_bound:
        return residue - n
    raise RangeError(
        "residue %d outside signed window of half-width %d"
        % (residue, magnitude_bound)
    )


def quantize(value: float, scale: int = QUANT_SCALE) -> int:
    """Fixed-point quantisation: multiply by ``scale``, round half away
    from zero."""
    if scale <= 0:
        raise DomainError("scale must be positive")
    scaled = value * scale
    if scaled >= 0:
        return int(math.floor(scaled + 0.5))
    return int(math.ceil(scaled - 0.5))


def quantize_vector(values: Sequence[float], scale: int = QUANT_SCALE) -> List[int]:
    return [quantize(v, scale) for v in values]


def threshold_raw(epsilon: float, scale: int = QUANT_SCALE) -> int:
    """Convert a Euclidean distance threshold to the squared fixed-point
    domain the pipeline compares in.

    Distances are computed as squared Euclidean distances of quantized
    vectors, i.e. scaled by ``scale**2``; the matching threshold is
    ``(epsilon * scale)**2`` rounded to the nearest integer.
    """
    if not 0.0 < epsilon:
        raise DomainError("threshold must be positive")
    if math.isnan(epsilon) or math.isinf(epsilon):
        raise DomainError("threshold must be finite")
    scaled = epsilon * scale
    return int(math.floor(scaled * scaled + 0.5))


def _validate_component(raw: str, path: str, line: int) -> float:
    try:
        value = float(raw)
    except ValueError:
        raise DomainError(
            "%s:%d: feature component %r is not a number" % (path, line, raw)
        ) from None
    if math.isnan(value) or math.isinf(value):
        raise DomainError("%s:%d: feature component is not finite" % (path, line))
    if not 0.0 <= value <= 1.0:
        raise DomainError(
            "%s:%d: feature component %g outside [0, 1]" % (path, line, value)
        )
    return value


def read_feature_csv(path: str) -> List[Tuple[str, List[float]]]:
    """Read feature vectors from a CSV file.

    Each row is ``identifier, v1, ..., vd`` with every component a real
    number in ``[0, 1]``.  All rows must have the same dimension and
    identifiers must be unique and non-empty.
    """
    rows: List[Tuple[str, List[float]]] = []
    seen = set()
    dim = None
    with open(path, "r", newline="") as handle:
        for line_no, record in enumerate(csv.reader(handle), start=1):
            if not record or (len(record) == 1 and not record[0].strip()):
                continue  # skip blank lines
            ident = record[0].strip()
            if not ident:
                raise DomainError("%s:%d: empty identifier" % (path, line_no))
            if ident in seen:
                raise DomainError(
                    "%s:%d: duplicate identifier %r" % (path, line_no, ident)
                )
            seen.add(ident)
            components = [
                _validate_component(raw, path, line_no) for raw in record[1:]
            ]
            if not components:
                raise DomainError(
                    "%s:%d: row has no feature components" % (path, line_no)
                )
            if dim is None:
                dim = len(components)
            elif len(components) != dim:
                raise DomainError(
                    "%s:%d: expected %d components, found %d"
                    % (path, line_no, dim, len(components))
                )
            rows.append((ident, components))
    if not rows:
        raise DomainError("%s: no feature rows found" % path)
    return rows


def write_feature_csv(
    path: str, rows: Iterable[Tuple[str, Sequence[float]]]
) -> None:
    """Write feature vectors in the format accepted by
    :func:`read_feature_csv`."""
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as handle:
        writer = csv.writer(handle)
        for ident, components in rows:
            writer.writerow([ident] + ["%.10g" % v for v in components])
    os.replace(tmp, path)
