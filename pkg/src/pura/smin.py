"""Secure minimum of encrypted values between the two key holders.

One round compares two ciphertexts.  The initiator flips a private coin
π, blinds the (oriented) difference, and sends the blinded comparison
value D together with its partial decryption:

    π = 0:  D = ⟦r1·(x - y) + r1 + r2⟧
    π = 1:  D = ⟦r1·(y - x) + r2⟧

with r1 a nonzero σ-bit value and r2 drawn uniformly from
(⌊N/2⌋ - r1, ⌊N/2⌋].  The responder finishes the decryption and only
learns whether the plaintext lies above ⌊N/2⌋, which — by the choice of
r2 — is exactly the oriented comparison, with the orientation hidden by
π.  It answers with a re-randomized copy of y if the value is large and
x otherwise.  Under π = 1 the roles are mirrored, so the initiator
recovers the true minimum as ⟦x + y - d0⟧.

Both sides stay well inside the ring: operands are bounded by ±2^ℓ and
σ + ℓ + 2 is required to sit below ‖N‖ - 1, so no branch ever wraps.

An n-way minimum is a left fold of this round; n ciphertexts cost
exactly n - 1 rounds.
"""

from __future__ import annotations

from typing import Optional, Sequence

from ._mathcore import invmod, mulmod, powmod
from .errors import DomainError
from .hexint import to_hex
from .paillier import pdec
from .sessions import ProtocolContext, expect_reply, wire_ct
from .transport import Connection, Session

__all__ = ["smin2", "smin_n", "respond_smin"]


def smin2(
    ctx: ProtocolContext,
    conn: Connection,
    x_ct: int,
    y_ct: int,
    coin: Optional[int] = None,
    timeout: float = 30.0,
) -> int:
    """Ciphertext of min(x, y); one round, two frames.

    ``coin`` pins the orientation bit (tests only); normal use leaves it
    to the context's randomness source.
    """
    pk = ctx.public
    n_sq = pk.n_sq
    pi = ctx.rng.randrange(2) if coin is None else coin
    if pi not in (0, 1):
        raise DomainError("coin must be 0 or 1")
    blind = ctx.draw_smin()

    if pi == 0:
        diff = mulmod(x_ct, invmod(y_ct, n_sq), n_sq)  # ⟦x - y⟧
        d = mulmod(powmod(diff, blind.r1, n_sq), blind.sum_ct, n_sq)
    else:
        diff = mulmod(y_ct, invmod(x_ct, n_sq), n_sq)  # ⟦y - x⟧
        d = mulmod(powmod(diff, blind.r1, n_sq), blind.r2_ct, n_sq)
    own_part = pdec(ctx.share, d)

    sess = conn.open_session("sm")
    try:
        sess.send(
            "sm1",
            {
                "d": to_hex(d),
                "d1": to_hex(own_part.value),
                "x": to_hex(x_ct),
                "y": to_hex(y_ct),
            },
        )
        reply = expect_reply(sess, "sm2", timeout)
    finally:
        sess.close()
    d0 = wire_ct(pk, reply, "d0")

    if pi == 0:
        result = d0
    else:
        # The responder's rule ran on the mirrored difference, so it
        # returned the *maximum*; recover the minimum as x + y - d0.
        result = mulmod(mulmod(x_ct, y_ct, n_sq), invmod(d0, n_sq), n_sq)
    # Always re-randomize: the responder must not be able to recognise
    # this ciphertext if it comes back as input to a later round.
    return ctx.refresh(result)


def respond_smin(ctx: ProtocolContext, sess: Session, payload: dict) -> None:
    pk = ctx.public
    d = wire_ct(pk, payload, "d")
    peer_part = wire_ct(pk, payload, "d1")
    x_ct = wire_ct(pk, payload, "x")
    y_ct = wire_ct(pk, payload, "y")

    plain = ctx.decrypt_with_peer(d, peer_part)
    chosen = y_ct if plain > pk.n // 2 else x_ct
    sess.send("sm2", {"d0": to_hex(ctx.refresh(chosen))})


def smin_n(
    ctx: ProtocolContext,
    conn: Connection,
    cts: Sequence[int],
    timeout: float = 30.0,
) -> int:
    """Fold :func:`smin2` over ``cts``; n values take n - 1 rounds."""
    if not cts:
        raise DomainError("cannot take the minimum of nothing")
    acc = cts[0]
    for ct in cts[1:]:
        acc = smin2(ctx, conn, acc, ct, timeout=timeout)
    return acc
