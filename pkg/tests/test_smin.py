"""Tests for the two-party secure minimum."""

import pytest

from pura.encoding import decode_signed, encode_signed
from pura.errors import DomainError, ProtocolError
from pura.hexint import from_hex, to_hex
from pura.paillier import dec, enc, pdec
from pura.sessions import expect_reply, gen_smin_blinding
from pura.smin import smin2, smin_n

from conftest import protocol_pair


def _enc_signed(keys, value, rng):
    pk = keys.public
    return enc(pk, encode_signed(value, pk.n, pk.params.delta), rng)


def _dec_signed(keys, ct):
    pk = keys.public
    return decode_signed(dec(keys.private, ct), pk.n, pk.params.delta)


# -- the comparison predicate as plain modular arithmetic ------------------


def test_blinded_comparison_predicate(toy_keys, data_rng):
    """For both coin values, the decrypted comparison value sits above
    ⌊N/2⌋ exactly when the oriented difference is non-negative, and no
    branch ever wraps mod N."""
    pk = toy_keys.public
    n, half = pk.n, pk.n // 2
    delta = pk.params.delta
    for _ in range(300):
        x = data_rng.randrange(-delta, delta + 1)
        y = data_rng.randrange(-delta, delta + 1)
        blind = gen_smin_blinding(pk, data_rng)
        m0 = (blind.r1 * (x - y) + blind.r1 + blind.r2) % n
        m1 = (blind.r1 * (y - x) + blind.r2) % n
        # no wrap: both stay far from the ends of the ring
        assert 0 < m0 < n - 1 and 0 < m1 < n - 1
        assert (m0 > half) == (x >= y)
        assert (m1 > half) == (y > x)


def test_blinding_ranges(toy_keys, data_rng):
    pk = toy_keys.public
    sigma = pk.params.sigma
    half = pk.n // 2
    for _ in range(200):
        blind = gen_smin_blinding(pk, data_rng)
        assert 1 <= blind.r1 < 1 << sigma
        assert half - blind.r1 < blind.r2 <= half


# -- protocol runs ---------------------------------------------------------


def test_smin2_grid_both_coins(toy_keys, data_rng):
    with protocol_pair(toy_keys) as (ctx, conn, _):
        for x in range(-8, 9, 2):
            for y in range(-8, 9, 2):
                for coin in (0, 1):
                    x_ct = _enc_signed(toy_keys, x, data_rng)
                    y_ct = _enc_signed(toy_keys, y, data_rng)
                    out = smin2(ctx, conn, x_ct, y_ct, coin=coin)
                    assert _dec_signed(toy_keys, out) == min(x, y), (x, y, coin)


def test_smin2_ties_and_extremes(toy_keys, data_rng):
    delta = toy_keys.public.params.delta
    cases = [(5, 5), (-delta, -delta), (delta, delta), (-delta, delta), (delta, -delta), (0, 0)]
    with protocol_pair(toy_keys) as (ctx, conn, _):
        for x, y in cases:
            for coin in (0, 1):
                out = smin2(
                    ctx,
                    conn,
                    _enc_signed(toy_keys, x, data_rng),
                    _enc_signed(toy_keys, y, data_rng),
                    coin=coin,
                )
                assert _dec_signed(toy_keys, out) == min(x, y), (x, y, coin)


def test_smin2_output_is_unlinkable_ciphertext(toy_keys, data_rng):
    seen = []
    with protocol_pair(toy_keys) as (ctx, conn, _):
        conn.add_tap(lambda d, env, raw: seen.append(env))
        x_ct = _enc_signed(toy_keys, 9, data_rng)
        y_ct = _enc_signed(toy_keys, 4, data_rng)
        for coin in (0, 1):
            out = smin2(ctx, conn, x_ct, y_ct, coin=coin)
            assert _dec_signed(toy_keys, out) == 4
            replied = [
                from_hex(env["payload"]["d0"])
                for env in seen
                if env["step"] == "sm2"
            ]
            # The value handed back differs bit-for-bit from what the
            # responder sent and from both inputs.
            assert out not in replied
            assert out not in (x_ct, y_ct)


def test_responder_view_flips_with_coin(toy_keys, data_rng):
    """The bit the responder extracts is the oriented comparison; with
    x < y it must differ between the two coin values, so the bit alone
    never reveals the ordering."""
    observed = []
    with protocol_pair(toy_keys) as (ctx, conn, _):
        conn.add_tap(
            lambda d, env, raw: observed.append(env["payload"])
            if env["step"] == "sm1"
            else None
        )
        x_ct = _enc_signed(toy_keys, 3, data_rng)
        y_ct = _enc_signed(toy_keys, 12, data_rng)
        smin2(ctx, conn, x_ct, y_ct, coin=0)
        smin2(ctx, conn, x_ct, y_ct, coin=1)
    half = toy_keys.public.n // 2
    bits = [dec(toy_keys.private, from_hex(p["d"])) > half for p in observed]
    assert bits == [False, True]


def test_smin_n_folds(toy_keys, data_rng):
    delta = toy_keys.public.params.delta
    for size in (1, 2, 3, 5, 8):
        values = [data_rng.randrange(0, delta) for _ in range(size)]
        with protocol_pair(toy_keys) as (ctx, conn, _):
            cts = [_enc_signed(toy_keys, v, data_rng) for v in values]
            out = smin_n(ctx, conn, cts)
            stats = conn.stats()
        assert _dec_signed(toy_keys, out) == min(values)
        assert stats.steps_sent.get("sm1", 0) == size - 1


def test_smin_n_rejects_empty(toy_keys):
    with protocol_pair(toy_keys) as (ctx, conn, _):
        with pytest.raises(DomainError):
            smin_n(ctx, conn, [])


def test_smin2_coin_validation(toy_keys, data_rng):
    with protocol_pair(toy_keys) as (ctx, conn, _):
        ct = _enc_signed(toy_keys, 1, data_rng)
        with pytest.raises(DomainError):
            smin2(ctx, conn, ct, ct, coin=2)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda pk, p: p.pop("d"),
        lambda pk, p: p.update(d="not-hex!"),
        lambda pk, p: p.update(x=to_hex(pk.n_sq)),
        lambda pk, p: p.update(d1="0"),
    ],
)
def test_smin_responder_rejects_bad_requests(toy_keys, data_rng, mutate):
    pk = toy_keys.public
    with protocol_pair(toy_keys) as (ctx, conn, _):
        good_d = _enc_signed(toy_keys, 1, data_rng)
        payload = {
            "d": to_hex(good_d),
            "d1": to_hex(pdec(ctx.share, good_d).value),
            "x": to_hex(_enc_signed(toy_keys, 1, data_rng)),
            "y": to_hex(_enc_signed(toy_keys, 2, data_rng)),
        }
        mutate(pk, payload)
        sess = conn.open_session("sm")
        sess.send("sm1", payload)
        with pytest.raises(ProtocolError, match="peer reported"):
            expect_reply(sess, "sm2", timeout=5)
