"""Tests for the batched squaring and multiplication protocols."""

import pytest
from hypothesis import given, strategies as st

from pura import params as param_mod
from pura.batch import (
    batch_smul,
    batch_smul_once,
    batch_square,
    batch_square_once,
    mul_capacity,
    square_capacity,
)
from pura.encoding import decode_signed, encode_signed
from pura.errors import CapacityError, DomainError, ProtocolError
from pura.hexint import to_hex
from pura.paillier import dec, enc
from pura.sessions import expect_reply

from conftest import protocol_pair

ints = st.integers(min_value=-(2**40), max_value=2**40)
nonneg = st.integers(min_value=0, max_value=2**41)


# -- the blinding algebra, as plain integer identities --------------------


@given(x=ints, r=nonneg, delta=nonneg)
def test_square_unblinding_identity(x, r, delta):
    blinded_square = (x + r) ** 2
    assert blinded_square - 2 * r * (x + delta) - r * r + 2 * delta * r == x * x


@given(x=ints, y=ints, r1=nonneg, r2=nonneg, delta=nonneg)
def test_mul_unblinding_identity(x, y, r1, r2, delta):
    blinded_product = (x + r1) * (y + r2)
    corrected = (
        blinded_product
        - r2 * (x + delta)
        - r1 * (y + delta)
        - r1 * r2
        + delta * (r1 + r2)
    )
    assert corrected == x * y


def test_packing_capacities():
    # slot bits = sigma + 3; defaults pack 7 squares or 3 pairs, the toy
    # profile 6 and 3.
    assert square_capacity(param_mod.DEFAULT) == 7
    assert mul_capacity(param_mod.DEFAULT) == 3
    assert square_capacity(param_mod.TOY) == 6
    assert mul_capacity(param_mod.TOY) == 3


# -- full protocol runs over loopback --------------------------------------


def _enc_signed(keys, value, rng):
    pk = keys.public
    return enc(pk, encode_signed(value, pk.n, pk.params.delta), rng)


def _dec_signed(keys, ct, bound):
    return decode_signed(dec(keys.private, ct), keys.public.n, bound)


def test_batch_square_matches_plaintext(toy_keys, data_rng):
    delta = toy_keys.public.params.delta
    values = [0, 1, -1, 17, -200, delta, -delta, 111, -3]
    with protocol_pair(toy_keys) as (ctx, conn, _):
        cts = [_enc_signed(toy_keys, v, data_rng) for v in values]
        results = batch_square(ctx, conn, cts)
    assert [_dec_signed(toy_keys, ct, delta * delta) for ct in results] == [
        v * v for v in values
    ]


def test_batch_square_splits_across_exchanges(toy_keys, data_rng):
    capacity = square_capacity(toy_keys.public.params)
    count = 2 * capacity + 1
    values = [data_rng.randrange(-256, 257) for _ in range(count)]
    with protocol_pair(toy_keys) as (ctx, conn, right):
        cts = [_enc_signed(toy_keys, v, data_rng) for v in values]
        results = batch_square(ctx, conn, cts)
        stats = right.stats()
    assert stats.steps_received["bsq1"] == 3
    assert stats.steps_sent["bsq2"] == 3
    assert [_dec_signed(toy_keys, ct, 256 * 256) for ct in results] == [
        v * v for v in values
    ]


def test_batch_square_ciphertext_traffic(toy_keys, data_rng):
    # One full exchange moves 2 ciphertexts forward and s back.
    capacity = square_capacity(toy_keys.public.params)
    values = [data_rng.randrange(-256, 257) for _ in range(capacity)]
    captured = []
    with protocol_pair(toy_keys) as (ctx, conn, _):
        conn.add_tap(lambda d, env, raw: captured.append((d, env)))
        cts = [_enc_signed(toy_keys, v, data_rng) for v in values]
        batch_square(ctx, conn, cts)
    sent = [env for d, env in captured if d == "send"]
    received = [env for d, env in captured if d == "recv"]
    assert len(sent) == 1 and sent[0]["step"] == "bsq1"
    assert set(sent[0]["payload"]) == {"c", "c1", "s"}  # two ciphertexts + count
    assert len(received) == 1 and received[0]["step"] == "bsq2"
    assert len(received[0]["payload"]["squares"]) == capacity


def test_batch_smul_matches_plaintext(toy_keys, data_rng):
    delta = toy_keys.public.params.delta
    pairs = [
        (0, 0),
        (1, -1),
        (-15, -3),
        (delta, -delta),
        (delta, delta),
        (7, 31),
        (-250, 249),
    ]
    with protocol_pair(toy_keys) as (ctx, conn, _):
        x_cts = [_enc_signed(toy_keys, x, data_rng) for x, _ in pairs]
        y_cts = [_enc_signed(toy_keys, y, data_rng) for _, y in pairs]
        results = batch_smul(ctx, conn, x_cts, y_cts)
    assert [_dec_signed(toy_keys, ct, delta * delta) for ct in results] == [
        x * y for x, y in pairs
    ]


def test_batch_smul_splits_across_exchanges(toy_keys, data_rng):
    capacity = mul_capacity(toy_keys.public.params)
    count = 2 * capacity + 2
    pairs = [
        (data_rng.randrange(-256, 257), data_rng.randrange(-256, 257))
        for _ in range(count)
    ]
    with protocol_pair(toy_keys) as (ctx, conn, right):
        x_cts = [_enc_signed(toy_keys, x, data_rng) for x, _ in pairs]
        y_cts = [_enc_signed(toy_keys, y, data_rng) for _, y in pairs]
        results = batch_smul(ctx, conn, x_cts, y_cts)
        stats = right.stats()
    assert stats.steps_received["bsm1"] == -(-count // capacity)
    assert [_dec_signed(toy_keys, ct, 256 * 256) for ct in results] == [
        x * y for x, y in pairs
    ]


def test_batch_input_validation(toy_keys):
    with protocol_pair(toy_keys) as (ctx, conn, _):
        with pytest.raises(DomainError):
            batch_square(ctx, conn, [])
        with pytest.raises(DomainError):
            batch_smul(ctx, conn, [1], [])
        capacity = square_capacity(ctx.params)
        with pytest.raises(CapacityError):
            batch_square_once(ctx, conn, [2] * (capacity + 1))
        with pytest.raises(CapacityError):
            batch_smul_once(
                ctx, conn, [2] * (mul_capacity(ctx.params) + 1),
                [2] * (mul_capacity(ctx.params) + 1),
            )
        # Nothing was sent for any of the failures above.
        assert conn.stats().frames_sent == 0


@pytest.mark.parametrize(
    "mutate",
    [
        lambda pk, p: p.update(s=99),                      # over capacity
        lambda pk, p: p.update(s="2"),                     # wrong type
        lambda pk, p: p.update(c="zz"),                    # bad hex
        lambda pk, p: p.update(c=to_hex(pk.n_sq + 1)),     # out of group
        lambda pk, p: p.pop("c1"),                         # missing field
    ],
)
def test_square_responder_rejects_bad_requests(toy_keys, data_rng, mutate):
    pk = toy_keys.public
    with protocol_pair(toy_keys) as (ctx, conn, _):
        good = {
            "c": to_hex(_enc_signed(toy_keys, 3, data_rng)),
            "c1": to_hex(_enc_signed(toy_keys, 0, data_rng)),
            "s": 1,
        }
        mutate(pk, good)
        sess = conn.open_session("bsq")
        sess.send("bsq1", good)
        with pytest.raises(ProtocolError, match="peer reported"):
            expect_reply(sess, "bsq2", timeout=5)


def test_responder_rejects_overfull_packing(toy_keys, data_rng):
    # A single huge plaintext: claims one slot but its value needs more.
    pk = toy_keys.public
    params = pk.params
    with protocol_pair(toy_keys) as (ctx, conn, _):
        big = enc(pk, params.slot_radix**2, data_rng)
        from pura.paillier import pdec

        part = pdec(ctx.share, big)
        sess = conn.open_session("bsq")
        sess.send("bsq1", {"c": to_hex(big), "c1": to_hex(part.value), "s": 1})
        with pytest.raises(ProtocolError, match="exceeds 1 slots"):
            expect_reply(sess, "bsq2", timeout=5)
