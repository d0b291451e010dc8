"""Batched two-party squaring and multiplication on ciphertexts.

Both protocols follow the same shape.  The initiator shifts each operand
into a non-negative window (adding the public constant δ), blinds it
with an encrypted random value, packs many blinded operands into a
single ciphertext by Horner's rule in radix ``L``, partially decrypts
the package, and ships it.  The responder finishes the threshold
decryption, splits the plaintext back into slots, computes the product
or square of the *blinded* values, and returns fresh encryptions of the
results.  The initiator then strips the blinding homomorphically:

    squaring:  (x+r)² - 2r(x+δ) - r² + 2δr           = x²
    multiply:  (x+r1)(y+r2) - r2(x+δ) - r1(y+δ)
                             - r1·r2 + δ(r1+r2)      = x·y

One request/response exchange handles up to ``square_capacity`` single
operands or ``mul_capacity`` pairs; the high-level entry points split
longer inputs across as many exchanges as needed.

Operands must stay within ±δ (δ = 2^ℓ); that is the caller's contract,
since ciphertexts cannot be range-checked locally.
"""

from __future__ import annotations

from collections import deque
from typing import List, NamedTuple, Sequence

from ._mathcore import mulmod, pack_fold
from .errors import CapacityError, DomainError, ProtocolError
from .hexint import to_hex
from .paillier import (
    enc,
    hom_add_plain,
    hom_scalar_mul_signed,
    pdec,
)
from .params import ParamSet
from .sessions import ProtocolContext, expect_reply, wire_count, wire_ct, wire_ct_list
from .transport import Connection, Session

__all__ = [
    "square_capacity",
    "mul_capacity",
    "batch_square",
    "batch_square_once",
    "batch_smul",
    "batch_smul_once",
    "respond_batch_square",
    "respond_batch_smul",
]


def square_capacity(params: ParamSet) -> int:
    """Single operands per exchange: ⌊modulus bits / slot bits⌋."""
    return params.modulus_bits // params.slot_bits

def mul_capacity(params: ParamSet) -> int:
    """Operand pairs per exchange (each pair takes two slots)."""
    return params.modulus_bits // (2 * params.slot_bits)


def _slot_shift(params: ParamSet) -> int:
    # Slots are packed in radix L = 2^(σ+2); extraction shifts by its
    # exponent, while the capacity formulas budget ‖L‖ = σ+3 bits.
    return params.slot_radix.bit_length() - 1


# -- batched squaring ------------------------------------------------------


#: How many packed exchanges may be in flight before the oldest reply
#: is awaited.  Pipelining hides the round-trip and keeps the responder
#: busy while the initiator packs the next chunk.
PIPELINE_WINDOW = 8


def batch_square(
    ctx: ProtocolContext,
    conn: Connection,
    x_cts: Sequence[int],
    timeout: float = 30.0,
    window: int = PIPELINE_WINDOW,
) -> List[int]:
    """Square every ⟦x⟧ in ``x_cts``; splits into as many exchanges as
    the packing capacity requires, keeping up to ``window`` in flight."""
    if not x_cts:
        raise DomainError("batch is empty")
    if window < 1:
        raise DomainError("pipeline window must be positive")
    step = square_capacity(ctx.params)
    out: List[int] = []
    pending = deque()
    try:
        for start in range(0, len(x_cts), step):
            pending.append(_send_square(ctx, conn, x_cts[start : start + step]))
            if len(pending) >= window:
                out.extend(_collect_square(ctx, pending.popleft(), timeout))
        while pending:
            out.extend(_collect_square(ctx, pending.popleft(), timeout))
    finally:
        for exchange in pending:
            exchange.sess.close()
    return out


def batch_square_once(
    ctx: ProtocolContext, conn: Connection, x_cts: Sequence[int], timeout: float = 30.0
) -> List[int]:
    """One packed exchange; rejects batches beyond the slot capacity."""
    if not x_cts:
        raise DomainError("batch is empty")
    return _collect_square(ctx, _send_square(ctx, conn, x_cts), timeout)


class _SquareExchange(NamedTuple):
    sess: Session
    shifted: List[int]
    bundles: list


def _send_square(
    ctx: ProtocolContext, conn: Connection, x_cts: Sequence[int]
) -> _SquareExchange:
    pk = ctx.public
    params = ctx.params
    n_sq = pk.n_sq
    capacity = square_capacity(params)
    if len(x_cts) > capacity:
        raise CapacityError(
            "%d operands exceed the %d-slot capacity" % (len(x_cts), capacity)
        )

    bundles = [ctx.draw_square() for _ in x_cts]
    shifted = [hom_add_plain(pk, ct, params.delta) for ct in x_cts]  # ⟦x+δ⟧
    blinded = [
        mulmod(sh, b.r_ct, n_sq) for sh, b in zip(shifted, bundles)
    ]  # ⟦x+δ+r⟧
    packed = pack_fold(blinded, params.slot_radix, n_sq)
    own_part = pdec(ctx.share, packed)

    sess = conn.open_session("bsq")
    sess.send(
        "bsq1",
        {"c": to_hex(packed), "c1": to_hex(own_part.value), "s": len(x_cts)},
    )
    return _SquareExchange(sess, shifted, bundles)


def _collect_square(
    ctx: ProtocolContext, exchange: _SquareExchange, timeout: float
) -> List[int]:
    pk = ctx.public
    n_sq = pk.n_sq
    try:
        reply = expect_reply(exchange.sess, "bsq2", timeout)
    finally:
        exchange.sess.close()
    squares = wire_ct_list(pk, reply, "squares", len(exchange.shifted))

    out = []
    for sq, sh, b in zip(squares, exchange.shifted, exchange.bundles):
        ct = mulmod(sq, hom_scalar_mul_signed(pk, sh, -2 * b.r), n_sq)
        out.append(mulmod(ct, b.fix_ct, n_sq))
    return out


def respond_batch_square(ctx: ProtocolContext, sess: Session, payload: dict) -> None:
    pk = ctx.public
    params = ctx.params
    count = wire_count(payload, "s", square_capacity(params))
    packed = wire_ct(pk, payload, "c")
    peer_part = wire_ct(pk, payload, "c1")

    plain = ctx.decrypt_with_peer(packed, peer_part)
    if plain >= params.slot_radix**count:
        raise ProtocolError("packed plaintext exceeds %d slots" % count)
    shift = _slot_shift(params)
    mask = params.slot_radix - 1
    squares = []
    for k in range(count):
        blinded = ((plain >> (shift * k)) & mask) - params.delta  # x + r, signed
        squares.append(enc(pk, (blinded * blinded) % pk.n, ctx.rng))
    sess.send("bsq2", {"squares": [to_hex(ct) for ct in squares]})


# -- batched multiplication ------------------------------------------------


def batch_smul(
    ctx: ProtocolContext,
    conn: Connection,
    x_cts: Sequence[int],
    y_cts: Sequence[int],
    timeout: float = 30.0,
    window: int = PIPELINE_WINDOW,
) -> List[int]:
    """Multiply ⟦x_i⟧·⟦y_i⟧ pairwise, splitting across exchanges as
    capacity requires, keeping up to ``window`` in flight."""
    if len(x_cts) != len(y_cts):
        raise DomainError("operand lists differ in length")
    if not x_cts:
        raise DomainError("batch is empty")
    if window < 1:
        raise DomainError("pipeline window must be positive")
    step = mul_capacity(ctx.params)
    out: List[int] = []
    pending = deque()
    try:
        for start in range(0, len(x_cts), step):
            pending.append(
                _send_smul(
                    ctx,
                    conn,
                    x_cts[start : start + step],
                    y_cts[start : start + step],
                )
            )
            if len(pending) >= window:
                out.extend(_collect_smul(ctx, pending.popleft(), timeout))
        while pending:
            out.extend(_collect_smul(ctx, pending.popleft(), timeout))
    finally:
        for exchange in pending:
            exchange.sess.close()
    return out


def batch_smul_once(
    ctx: ProtocolContext,
    conn: Connection,
    x_cts: Sequence[int],
    y_cts: Sequence[int],
    timeout: float = 30.0,
) -> List[int]:
    if len(x_cts) != len(y_cts):
        raise DomainError("operand lists differ in length")
    if not x_cts:
        raise DomainError("batch is empty")
    return _collect_smul(ctx, _send_smul(ctx, conn, x_cts, y_cts), timeout)


class _MulExchange(NamedTuple):
    sess: Session
    x_shift: List[int]
    y_shift: List[int]
    bundles: list


def _send_smul(
    ctx: ProtocolContext,
    conn: Connection,
    x_cts: Sequence[int],
    y_cts: Sequence[int],
) -> _MulExchange:
    pk = ctx.public
    params = ctx.params
    n_sq = pk.n_sq
    capacity = mul_capacity(params)
    if len(x_cts) > capacity:
        raise CapacityError(
            "%d pairs exceed the %d-pair capacity" % (len(x_cts), capacity)
        )

    bundles = [ctx.draw_mul() for _ in x_cts]
    x_shift = [hom_add_plain(pk, ct, params.delta) for ct in x_cts]
    y_shift = [hom_add_plain(pk, ct, params.delta) for ct in y_cts]
    # Low slot first, y below x within each pair.
    interleaved = []
    for xs, ys, b in zip(x_shift, y_shift, bundles):
        interleaved.append(mulmod(ys, b.r2_ct, n_sq))  # ⟦y+δ+r2⟧
        interleaved.append(mulmod(xs, b.r1_ct, n_sq))  # ⟦x+δ+r1⟧
    packed = pack_fold(interleaved, params.slot_radix, n_sq)
    own_part = pdec(ctx.share, packed)

    sess = conn.open_session("bsm")
    sess.send(
        "bsm1",
        {"c": to_hex(packed), "c1": to_hex(own_part.value), "s": len(x_cts)},
    )
    return _MulExchange(sess, x_shift, y_shift, bundles)


def _collect_smul(
    ctx: ProtocolContext, exchange: _MulExchange, timeout: float
) -> List[int]:
    pk = ctx.public
    n_sq = pk.n_sq
    try:
        reply = expect_reply(exchange.sess, "bsm2", timeout)
    finally:
        exchange.sess.close()
    products = wire_ct_list(pk, reply, "products", len(exchange.x_shift))

    out = []
    for prod, xs, ys, b in zip(
        products, exchange.x_shift, exchange.y_shift, exchange.bundles
    ):
        ct = mulmod(prod, hom_scalar_mul_signed(pk, xs, -b.r2), n_sq)
        ct = mulmod(ct, hom_scalar_mul_signed(pk, ys, -b.r1), n_sq)
        out.append(mulmod(ct, b.fix_ct, n_sq))
    return out


def respond_batch_smul(ctx: ProtocolContext, sess: Session, payload: dict) -> None:
    pk = ctx.public
    params = ctx.params
    pairs = wire_count(payload, "s", mul_capacity(params))
    packed = wire_ct(pk, payload, "c")
    peer_part = wire_ct(pk, payload, "c1")

    plain = ctx.decrypt_with_peer(packed, peer_part)
    if plain >= params.slot_radix ** (2 * pairs):
        raise ProtocolError("packed plaintext exceeds %d slots" % (2 * pairs))
    shift = _slot_shift(params)
    mask = params.slot_radix - 1
    products = []
    for k in range(pairs):
        y_blinded = ((plain >> (shift * 2 * k)) & mask) - params.delta  # y + r2
        x_blinded = ((plain >> (shift * (2 * k + 1))) & mask) - params.delta  # x + r1
        products.append(enc(pk, (x_blinded * y_blinded) % pk.n, ctx.rng))
    sess.send("bsm2", {"products": [to_hex(ct) for ct in products]})
