"""Plaintext reference pipeline.

Computes exactly what the encrypted twin-server pipeline computes —
same quantisation, same squared distances, same clamped minimum, same
accept rule — with no cryptography.  The end-to-end tests hold the
encrypted pipeline to bit-identical agreement with this module, and the
benchmark uses it as the cost-of-privacy reference point.
"""

from __future__ import annotations

from typing import List, Sequence, Tuple

from .encoding import quantize_vector
from .errors import DomainError

__all__ = ["squared_distance", "recognize_plain"]


def squared_distance(a: Sequence[int], b: Sequence[int]) -> int:
    if len(a) != len(b):
        raise DomainError("vectors differ in dimension")
    return sum((x - y) * (x - y) for x, y in zip(a, b))


def recognize_plain(
    db_rows: Sequence[Tuple[str, Sequence[float]]],
    probe: Sequence[float],
    epsilon_raw: int,
) -> Tuple[int, bool, List[int]]:
    """Run the reference recognition.

    Returns ``(gamma, accepted, distances)`` where gamma is the minimum
    of all quantized squared distances clamped from above by the raw
    threshold, and the probe is accepted iff gamma lies strictly below
    it.
    """
    if epsilon_raw <= 0:
        raise DomainError("threshold must be positive")
    if not db_rows:
        raise DomainError("database is empty")
    probe_q = quantize_vector(probe)
    distances = []
    for _, features in db_rows:
        row_q = quantize_vector(features)
        distances.append(squared_distance(probe_q, row_q))
    gamma = min(min(distances), epsilon_raw)
    return gamma, gamma < epsilon_raw, distances
