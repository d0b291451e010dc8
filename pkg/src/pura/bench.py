"""Benchmark harness.

Three suites, all reporting ``suite,op,size,wall_ms,frames,bytes,
ciphertexts`` rows:

* ``kernels``   -- raw modular arithmetic, once per importable backend,
  so the compiled core can be compared against the pure-Python fallback.
* ``protocols`` -- the batched two-party protocols against their naive
  one-element-per-exchange equivalents, over loopback transport.
* ``pipeline``  -- full recognitions against an in-process twin-server
  pipeline, for growing database sizes.

For orientation, published reference timings for a native-code
implementation of the same batched protocols at a 1024-bit modulus are
kept in :data:`REFERENCE_TIMINGS_MS`; ``format_table`` appends them to
matching rows.
"""

import csv
import random
import threading
import time
from dataclasses import astuple, dataclass
from typing import List, Optional, Sequence

from ._mathcore import available_backends
from .batch import batch_smul, batch_square, mul_capacity, square_capacity
from .encoding import encode_signed, threshold_raw
from .engine import local_pipeline
from .errors import DomainError
from .paillier import KeyMaterial, enc
from .params import ParamSet
from .pool import RandomnessPool
from .sessions import ProtocolContext, serve_connection
from .smin import smin_n
from .transport import Connection, loopback_pair

#: Published reference timings (milliseconds) for a native-code
#: implementation of the same batched protocols, 1024-bit modulus,
#: keyed by element count.  Useful as a sanity anchor when reading
#: ``protocols`` rows at the default profile.
REFERENCE_TIMINGS_MS = {
    "batch-square": {1000: 60, 2000: 90, 5000: 173, 10000: 304},
    "batch-smul": {1000: 104, 2000: 156, 5000: 274, 10000: 481},
}

FIELDS = ("suite", "op", "size", "wall_ms", "frames", "bytes", "ciphertexts")


@dataclass
class BenchRow:
    suite: str
    op: str
    size: int
    wall_ms: float
    frames: int = 0
    bytes: int = 0
    ciphertexts: int = 0


def write_csv(rows: Sequence[BenchRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(FIELDS)
        for row in rows:
            writer.writerow(astuple(row))


def format_table(rows: Sequence[BenchRow]) -> str:
    lines = ["%-9s %-16s %8s %12s %8s %10s %8s %s"
             % ("suite", "op", "size", "wall_ms", "frames", "bytes", "cts", "reference")]
    for row in rows:
        ref = REFERENCE_TIMINGS_MS.get(row.op, {}).get(row.size)
        note = "%d ms published" % ref if ref is not None else ""
        lines.append(
            "%-9s %-16s %8d %12.2f %8d %10d %8d %s"
            % (row.suite, row.op, row.size, row.wall_ms,
               row.frames, row.bytes, row.ciphertexts, note)
        )
    return "\n".join(lines)


# -- kernels -------------------------------------------------------------


def _kernel_operands(bits: int, rng) -> dict:
    # A synthetic odd modulus is enough for raw arithmetic timing.
    n = rng.getrandbits(bits) | (1 << (bits - 1)) | 1
    n_sq = n * n
    a = rng.randrange(1, n_sq) | 1
    while _gcd(a, n_sq) != 1:
        a = rng.randrange(1, n_sq) | 1
    return {
        "n": n,
        "n_sq": n_sq,
        "a": a,
        "b": rng.randrange(1, n_sq),
        "e": rng.getrandbits(bits),
        "pack": [rng.getrandbits(smaller) for smaller in [bits // 4] * 16],
    }


def _gcd(a: int, b: int) -> int:
    while b:
        a, b = b, a % b
    return a


def run_kernels(params: ParamSet, repeat: int = 50, rng=None) -> List[BenchRow]:
    """Time the hot arithmetic calls once per importable backend."""
    rng = rng if rng is not None else random.Random(20260814)
    ops = _kernel_operands(params.modulus_bits, rng)
    rows: List[BenchRow] = []
    for name, impl in sorted(available_backends().items()):
        fixed = impl.FixedBase(ops["a"], ops["n_sq"], params.modulus_bits)
        cases = {
            "powmod/" + name: lambda: impl.powmod(ops["a"], ops["e"], ops["n_sq"]),
            "fixedbase/" + name: lambda: fixed.pow(ops["e"]),
            "mulmod/" + name: lambda: impl.mulmod(ops["a"], ops["b"], ops["n_sq"]),
            "invmod/" + name: lambda: impl.invmod(ops["a"], ops["n_sq"]),
            "packfold/" + name: lambda: impl.pack_fold(
                ops["pack"], 1 << (params.sigma + 2), ops["n_sq"]
            ),
        }
        for op, call in cases.items():
            call()  # warm caches before timing
            start = time.perf_counter()
            for _ in range(repeat):
                call()
            wall = (time.perf_counter() - start) / repeat
            rows.append(BenchRow("kernels", op, params.modulus_bits, wall * 1000.0))
    return rows


# -- protocols -----------------------------------------------------------


class _Responder:
    """Background thread answering protocol requests on one connection."""

    def __init__(self, material: KeyMaterial, pool: Optional[RandomnessPool] = None):
        self.initiator_conn, responder_conn = loopback_pair("bench")
        self._stop = threading.Event()
        ctx = ProtocolContext(material.public, material.share2, pool=pool)
        self._thread = threading.Thread(
            target=serve_connection,
            args=(ctx, responder_conn, None, self._stop),
            daemon=True,
        )
        self._thread.start()
        self._responder_conn = responder_conn

    def close(self) -> None:
        self._stop.set()
        self.initiator_conn.close()
        self._responder_conn.close()
        self._thread.join(timeout=5)


def _timed(conn: Connection, call) -> BenchRow:
    before = conn.stats()
    start = time.perf_counter()
    call()
    wall = (time.perf_counter() - start) * 1000.0
    after = conn.stats()
    return BenchRow(
        "protocols",
        "",
        0,
        wall,
        frames=(after.frames_sent - before.frames_sent)
        + (after.frames_received - before.frames_received),
        bytes=(after.bytes_sent - before.bytes_sent)
        + (after.bytes_received - before.bytes_received),
    )


def run_protocols(
    material: KeyMaterial,
    sizes: Sequence[int],
    repeat: int = 1,
    rng=None,
    include_naive: bool = True,
) -> List[BenchRow]:
    """Batched protocols with a warm pool versus naive per-element
    exchanges with online randomness."""
    rng = rng if rng is not None else random.Random(20260814)
    pk = material.public
    params = pk.params
    bound = min(1 << (params.sigma - 1), params.delta - 1)
    rows: List[BenchRow] = []

    def cts_for(values):
        return [enc(pk, encode_signed(v, pk.n, bound), rng) for v in values]

    for size in sizes:
        values = [rng.randrange(-bound // 2, bound // 2) for _ in range(size)]
        other = [rng.randrange(-bound // 2, bound // 2) for _ in range(size)]
        sq_exch = -(-size // square_capacity(params))
        mul_exch = -(-size // mul_capacity(params))
        needs = {
            "square": sq_exch * square_capacity(params) * repeat,
            "mul": mul_exch * mul_capacity(params) * repeat,
            "smin": max(size, 2) * repeat,
            "zero": max(size, 2) * repeat,
        }
        pool = RandomnessPool(pk, rng=rng, targets=needs, low_water=0.0)
        pool.fill()
        responder_pool = RandomnessPool(pk, rng=rng, targets=needs, low_water=0.0)
        responder_pool.fill()
        warm = _Responder(material, pool=responder_pool)
        ctx = ProtocolContext(pk, material.share1, rng=rng, pool=pool)
        conn = warm.initiator_conn

        plan = [
            ("batch-square", lambda: batch_square(ctx, conn, cts_for(values)),
             2 * sq_exch + size),
            ("batch-smul", lambda: batch_smul(
                ctx, conn, cts_for(values), cts_for(other)),
             2 * mul_exch + size),
            ("smin-fold", lambda: smin_n(ctx, conn, cts_for(values)),
             5 * (size - 1) if size > 1 else 0),
        ]
        for op, call, cts in plan:
            samples = [_timed(conn, call) for _ in range(repeat)]
            best = min(samples, key=lambda r: r.wall_ms)
            best.op, best.size, best.ciphertexts = op, size, cts
            rows.append(best)
        warm.close()
        pool.close()
        responder_pool.close()

        if not include_naive:
            continue
        cold = _Responder(material)
        ctx = ProtocolContext(pk, material.share1, rng=rng, pool=None)
        conn = cold.initiator_conn

        def naive_square():
            cts = cts_for(values)
            return [batch_square(ctx, conn, [ct])[0] for ct in cts]

        def naive_smul():
            cts = list(zip(cts_for(values), cts_for(other)))
            return [batch_smul(ctx, conn, [a], [b])[0] for a, b in cts]

        for op, call, cts in [
            ("naive-square", naive_square, 3 * size),
            ("naive-smul", naive_smul, 3 * size),
        ]:
            samples = [_timed(conn, call) for _ in range(repeat)]
            best = min(samples, key=lambda r: r.wall_ms)
            best.op, best.size, best.ciphertexts = op, size, cts
            rows.append(best)
        cold.close()
    return rows


# -- pipeline ------------------------------------------------------------


def run_pipeline(
    material: KeyMaterial,
    sizes: Sequence[int],
    dim: int = 16,
    repeat: int = 3,
    rng=None,
) -> List[BenchRow]:
    """Whole recognitions per database size; ``ciphertexts`` counts what
    the client itself transfers (probe vector plus its mask)."""
    rng = rng if rng is not None else random.Random(20260814)
    epsilon_raw = threshold_raw(0.35)
    rows: List[BenchRow] = []
    for size in sizes:
        db = [
            ("row-%05d" % k, [rng.random() for _ in range(dim)])
            for k in range(size)
        ]
        with local_pipeline(material, db, epsilon_raw, rng=rng) as pipe:
            conns = pipe._all_conns
            pipe.recognize(db[0][1], epsilon_raw, rng=rng)  # warm the path
            walls = []
            before = [c.stats() for c in conns]
            start = time.perf_counter()
            for k in range(repeat):
                probe = db[k % len(db)][1]
                pipe.recognize(probe, epsilon_raw, rng=rng)
            walls.append((time.perf_counter() - start) / repeat)
            after = [c.stats() for c in conns]
        frames = sum(
            a.frames_sent - b.frames_sent for a, b in zip(after, before)
        )
        nbytes = sum(a.bytes_sent - b.bytes_sent for a, b in zip(after, before))
        rows.append(
            BenchRow(
                "pipeline",
                "recognize",
                size,
                min(walls) * 1000.0,
                frames=frames // repeat,
                bytes=nbytes // repeat,
                ciphertexts=dim + 1,
            )
        )
    return rows


# -- driver ----------------------------------------------------------------


def run_suite(
    suite: str,
    material: Optional[KeyMaterial],
    params: ParamSet,
    sizes: Sequence[int],
    repeat: int,
    dim: int = 16,
) -> List[BenchRow]:
    if suite == "kernels":
        return run_kernels(params, repeat=max(repeat, 10))
    if material is None:
        raise DomainError("suite %r needs key material" % suite)
    if suite == "protocols":
        return run_protocols(material, sizes, repeat=repeat)
    if suite == "pipeline":
        return run_pipeline(material, sizes, dim=dim, repeat=repeat)
    raise DomainError("unknown bench suite %r" % suite)
