"""Shared state and dispatch for the two-party protocols.

A :class:`ProtocolContext` bundles what every protocol step needs: the
public key, this party's key share, a randomness source, and an optional
pre-generated randomness pool.  The ``draw_*`` methods hand out blinding
bundles, falling back to on-line generation whenever no pool is attached
or the pool is empty, so protocol code never cares where its randomness
came from.

``serve_connection`` is the responder loop: it accepts incoming
sessions, reads their opening message, and dispatches on the step name.

Blinding bundles
----------------

Each bundle carries the raw blinding integers together with every
ciphertext of them the protocol will need, so the on-line cost of a
protocol run is independent of how many encryptions the blinding takes.
"""

from __future__ import annotations

import secrets
import threading
from typing import Callable, Dict, NamedTuple, Optional

from ._mathcore import mulmod
from .errors import (
    ConnectionClosedError,
    DomainError,
    ProtocolError,
    PuraError,
    TransportTimeoutError,
)
from .hexint import from_hex
from .paillier import (
    KeyShare,
    PartialDecryption,
    PublicKey,
    enc,
    pdec,
    tdec,
    validate_ciphertext,
)
from .transport import Connection, Session

__all__ = [
    "SquareBlinding",
    "MulBlinding",
    "SminBlinding",
    "MaskBlinding",
    "gen_square_blinding",
    "gen_mul_blinding",
    "gen_smin_blinding",
    "gen_zero_blinding",
    "gen_mask_blinding",
    "ProtocolContext",
    "serve_connection",
    "wire_hex",
    "wire_ct",
    "wire_count",
    "wire_ct_list",
    "wire_text",
    "expect_reply",
]


# -- wire parsing ----------------------------------------------------------
#
# Payload fields arriving from the peer are untrusted; every accessor
# below turns a malformed field into a ProtocolError naming it.


def wire_hex(payload: dict, key: str) -> int:
    try:
        return from_hex(payload[key])
    except KeyError:
        raise ProtocolError("payload is missing field %r" % key) from None
    except ValueError as exc:
        raise ProtocolError("field %r: %s" % (key, exc)) from None


def wire_ct(pk: PublicKey, payload: dict, key: str) -> int:
    value = wire_hex(payload, key)
    try:
        return validate_ciphertext(pk, value)
    except DomainError as exc:
        raise ProtocolError("field %r: %s" % (key, exc)) from None


def wire_count(payload: dict, key: str, maximum: int) -> int:
    value = payload.get(key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ProtocolError("field %r must be an integer" % key)
    if not 1 <= value <= maximum:
        raise ProtocolError(
            "field %r = %d outside the accepted range [1, %d]" % (key, value, maximum)
        )
    return value


def wire_ct_list(pk: PublicKey, payload: dict, key: str, expected: int) -> list:
    value = payload.get(key)
    if not isinstance(value, list) or len(value) != expected:
        raise ProtocolError("field %r must be a list of %d entries" % (key, expected))
    out = []
    for idx, entry in enumerate(value):
        try:
            out.append(validate_ciphertext(pk, from_hex(entry)))
        except (ValueError, DomainError, TypeError) as exc:
            raise ProtocolError("field %r[%d]: %s" % (key, idx, exc)) from None
    return out


def wire_text(payload: dict, key: str, max_len: int = 256) -> str:
    value = payload.get(key)
    if not isinstance(value, str) or not value or len(value) > max_len:
        raise ProtocolError("field %r must be a short non-empty string" % key)
    return value


def expect_reply(sess: "Session", step: str, timeout: float) -> dict:
    """Receive the peer's reply; surface an ``error`` step as a raised
    ProtocolError."""
    got, payload = sess.recv(timeout)
    if got == "error":
        raise ProtocolError(
            "peer reported: %s" % payload.get("message", "unknown error")
        )
    if got != step:
        raise ProtocolError("expected step %r, received %r" % (step, got))
    return payload


class SquareBlinding(NamedTuple):
    """Per-element blinding for the batched squaring protocol."""

    r: int
    r_ct: int       # ⟦r⟧
    fix_ct: int     # ⟦2δr - r²⟧, the constant part of the correction


class MulBlinding(NamedTuple):
    """Per-pair blinding for the batched multiplication protocol."""

    r1: int
    r2: int
    r1_ct: int      # ⟦r1⟧
    r2_ct: int      # ⟦r2⟧
    fix_ct: int     # ⟦δ(r1+r2) - r1·r2⟧, the constant correction


class SminBlinding(NamedTuple):
    """Blinding for one round of the secure-minimum protocol."""

    r1: int
    r2: int
    sum_ct: int          # ⟦r1+r2⟧
    r2_ct: int           # ⟦r2⟧


class MaskBlinding(NamedTuple):
    """Additive mask a client uses to hide the final distance."""

    r: int
    r_ct: int            # ⟦r⟧


def gen_square_blinding(pk: PublicKey, rng) -> SquareBlinding:
    params = pk.params
    r = rng.randrange(1 << params.sigma)
    delta = params.delta
    return SquareBlinding(
        r,
        enc(pk, r, rng),
        enc(pk, (2 * delta * r - r * r) % pk.n, rng),
    )


def gen_mul_blinding(pk: PublicKey, rng) -> MulBlinding:
    params = pk.params
    r1 = rng.randrange(1 << params.sigma)
    r2 = rng.randrange(1 << params.sigma)
    delta = params.delta
    return MulBlinding(
        r1,
        r2,
        enc(pk, r1, rng),
        enc(pk, r2, rng),
        enc(pk, (delta * (r1 + r2) - r1 * r2) % pk.n, rng),
    )


def gen_smin_blinding(pk: PublicKey, rng) -> SminBlinding:
    params = pk.params
    r1 = 0
    while r1 == 0:
        r1 = rng.randrange(1 << params.sigma)
    half = pk.n // 2
    # r2 uniform over (half - r1, half]: exactly r1 possible values.
    r2 = half - r1 + 1 + rng.randrange(r1)
    return SminBlinding(r1, r2, enc(pk, r1 + r2, rng), enc(pk, r2, rng))


def gen_zero_blinding(pk: PublicKey, rng) -> int:
    """A fresh encryption of zero, used to re-randomize ciphertexts."""
    return enc(pk, 0, rng)


def gen_mask_blinding(pk: PublicKey, rng) -> MaskBlinding:
    r = rng.randrange(1 << pk.params.sigma)
    return MaskBlinding(r, enc(pk, r, rng))


class ProtocolContext:
    """Everything one party needs to run the two-party protocols."""

    def __init__(self, public: PublicKey, share: KeyShare, rng=None, pool=None):
        if share.public is not public and share.public.n != public.n:
            raise ProtocolError("key share does not belong to this public key")
        self.public = public
        self.share = share
        self.rng = rng if rng is not None else secrets.SystemRandom()
        self.pool = pool

    @property
    def params(self):
        return self.public.params

    # -- randomness ------------------------------------------------------

    def _draw(self, kind: str, generate: Callable):
        if self.pool is not None:
            bundle = self.pool.try_draw(kind)
            if bundle is not None:
                return bundle
        return generate(self.public, self.rng)

    def draw_square(self) -> SquareBlinding:
        return self._draw("square", gen_square_blinding)

    def draw_mul(self) -> MulBlinding:
        return self._draw("mul", gen_mul_blinding)

    def draw_smin(self) -> SminBlinding:
        return self._draw("smin", gen_smin_blinding)

    def draw_zero(self) -> int:
        return self._draw("zero", gen_zero_blinding)

    def draw_mask(self) -> MaskBlinding:
        return self._draw("mask", gen_mask_blinding)

    def refresh(self, ct: int) -> int:
        """Re-randomize a ciphertext with a single-use zero encryption."""
        return mulmod(ct, self.draw_zero(), self.public.n_sq)

    # -- threshold decryption ---------------------------------------------

    def peer_partial(self, value: int) -> PartialDecryption:
        return PartialDecryption(value, 3 - self.share.index)

    def decrypt_with_peer(self, ct: int, peer_value: int) -> int:
        """Full decryption from our share plus the peer's partial value."""
        return tdec(self.public, pdec(self.share, ct), self.peer_partial(peer_value))


def _default_handlers() -> Dict[str, Callable]:
    # Imported here: batch and smin both import this module for the
    # context and bundle types.
    from .batch import respond_batch_smul, respond_batch_square
    from .smin import respond_smin

    return {
        "bsq1": respond_batch_square,
        "bsm1": respond_batch_smul,
        "sm1": respond_smin,
    }


def handle_session(
    ctx: ProtocolContext,
    sess: Session,
    handlers: Optional[Dict[str, Callable]] = None,
    timeout: Optional[float] = 30.0,
) -> None:
    """Read one opening message and run the matching responder.

    Protocol failures are reported to the peer on the same session as an
    ``error`` step; they never tear down the connection.
    """
    if handlers is None:
        handlers = _default_handlers()
    step, payload = sess.recv(timeout)
    handler = handlers.get(step)
    if handler is None and step == "error":
        # A stray failure notice (e.g. a reply to a session the peer
        # already abandoned).  Answering it would bounce errors back
        # and forth forever.
        sess.close()
        return
    try:
        if handler is None:
            raise ProtocolError("no responder for step %r" % step)
        handler(ctx, sess, payload)
    except PuraError as exc:
        try:
            sess.send("error", {"message": str(exc)})
        except PuraError:
            pass
    finally:
        sess.close()


def serve_connection(
    ctx: ProtocolContext,
    conn: Connection,
    handlers: Optional[Dict[str, Callable]] = None,
    stop: Optional[threading.Event] = None,
    poll: float = 0.2,
) -> None:
    """Respond to protocol sessions until the connection closes.

    Suitable as a thread target; ``stop`` ends the loop between
    sessions.
    """
    if handlers is None:
        handlers = _default_handlers()
    while stop is None or not stop.is_set():
        try:
            sess = conn.accept_session(timeout=poll)
        except TransportTimeoutError:
            continue
        except ConnectionClosedError:
            return
        try:
            handle_session(ctx, sess, handlers)
        except TransportTimeoutError:
            continue  # a session without an opening frame; keep serving
        except ConnectionClosedError:
            return
