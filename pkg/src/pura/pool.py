"""Pre-generated blinding material.

Every protocol round consumes blinding bundles whose encryptions
dominate its cost.  None of them depend on the operands, so they can be
produced ahead of time: a :class:`RandomnessPool` keeps a FIFO bucket
per bundle kind, hands bundles out strictly once, and (optionally)
refills itself from a background thread whenever a bucket drops below
its low-water mark.

A :class:`~pura.sessions.ProtocolContext` with a pool attached draws
from it and silently falls back to on-line generation when a bucket
runs dry, so a pool is always an optimization, never a correctness
concern.
"""

from __future__ import annotations

import secrets
import threading
from collections import deque
from typing import Dict, Optional

from .errors import DomainError
from .paillier import PublicKey
from .sessions import (
    gen_mask_blinding,
    gen_mul_blinding,
    gen_smin_blinding,
    gen_square_blinding,
    gen_zero_blinding,
)

__all__ = ["RandomnessPool", "DEFAULT_TARGETS"]

_GENERATORS = {
    "square": gen_square_blinding,
    "mul": gen_mul_blinding,
    "smin": gen_smin_blinding,
    "zero": gen_zero_blinding,
    "mask": gen_mask_blinding,
}

DEFAULT_TARGETS = {"square": 256, "mul": 64, "smin": 128, "zero": 128, "mask": 8}


class RandomnessPool:
    """FIFO buckets of single-use blinding bundles, one per kind."""

    def __init__(
        self,
        public: PublicKey,
        rng=None,
        targets: Optional[Dict[str, int]] = None,
        low_water: float = 0.25,
    ):
        self.public = public
        self.rng = rng if rng is not None else secrets.SystemRandom()
        self.targets = dict(DEFAULT_TARGETS)
        if targets:
            for kind, count in targets.items():
                if kind not in _GENERATORS:
                    raise DomainError("unknown pool kind %r" % kind)
                if count < 0:
                    raise DomainError("pool target must be non-negative")
                self.targets[kind] = count
        if not 0.0 <= low_water <= 1.0:
            raise DomainError("low-water fraction must lie in [0, 1]")
        self.low_water = low_water
        self._buckets: Dict[str, deque] = {kind: deque() for kind in _GENERATORS}
        self._lock = threading.Lock()
        self._generated: Dict[str, int] = dict.fromkeys(_GENERATORS, 0)
        self._drawn: Dict[str, int] = dict.fromkeys(_GENERATORS, 0)
        self._wake = threading.Event()
        self._stop = threading.Event()
        self._thread: Optional[threading.Thread] = None

    def _check_kind(self, kind: str) -> None:
        if kind not in _GENERATORS:
            raise DomainError("unknown pool kind %r" % kind)

    def fill(self, kind: Optional[str] = None, count: Optional[int] = None) -> None:
        """Generate bundles until the bucket holds its target (or
        ``count`` more).  Generation happens outside the lock, so draws
        proceed while a fill is running."""
        kinds = [kind] if kind is not None else list(_GENERATORS)
        for k in kinds:
            self._check_kind(k)
            goal = (
                self.level(k) + count if count is not None else self.targets[k]
            )
            while True:
                with self._lock:
                    if len(self._buckets[k]) >= goal:
                        break
                bundle = _GENERATORS[k](self.public, self.rng)
                with self._lock:
                    self._buckets[k].append(bundle)
                    self._generated[k] += 1

    def try_draw(self, kind: str):
        """Pop the oldest bundle of ``kind``; ``None`` when empty."""
        self._check_kind(kind)
        refill = False
        with self._lock:
            bucket = self._buckets[kind]
            if not bucket:
                return None
            bundle = bucket.popleft()
            self._drawn[kind] += 1
            target = self.targets[kind]
            refill = target > 0 and len(bucket) < target * self.low_water
        if refill and self._thread is not None:
            self._wake.set()
        return bundle

    def level(self, kind: str) -> int:
        self._check_kind(kind)
        with self._lock:
            return len(self._buckets[kind])

    def counters(self) -> Dict[str, Dict[str, int]]:
        with self._lock:
            return {
                kind: {
                    "level": len(self._buckets[kind]),
                    "generated": self._generated[kind],
                    "drawn": self._drawn[kind],
                }
                for kind in _GENERATORS
            }

    # -- background refill ----------------------------------------------

    def start_refill_thread(self) -> None:
        if self._thread is not None:
            return
        self._stop.clear()
        self._thread = threading.Thread(
            target=self._refill_loop, name="pool-refill", daemon=True
        )
        self._thread.start()

    def _refill_loop(self) -> None:
        while not self._stop.is_set():
            self._wake.wait(timeout=1.0)
            self._wake.clear()
            if self._stop.is_set():
                return
            for kind in _GENERATORS:
                if self._stop.is_set():
                    return
                self.fill(kind)

    def close(self) -> None:
        self._stop.set()
        self._wake.set()
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "RandomnessPool":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()
