"""Tests for enrolment, shards, and the twin-server pipeline."""

import threading

import pytest

from pura._mathcore import mulmod
from pura.baseline import recognize_plain, squared_distance
from pura.encoding import quantize_vector, threshold_raw
from pura.engine import (
    ServerNode,
    encrypt_database,
    encrypt_threshold,
    identities_from_doc,
    local_pipeline,
    shard_distances,
    shard_from_doc,
    threshold_from_doc,
)
from pura.errors import (
    DomainError,
    KeyFormatError,
    ParameterError,
    ProtocolError,
)
from pura.paillier import dec, enc
from pura.sessions import ProtocolContext

from conftest import protocol_pair


def make_rows(rng, count, dim):
    return [
        ("person-%03d" % i, [rng.random() for _ in range(dim)])
        for i in range(count)
    ]


# -- enrolment and shard documents -----------------------------------------


def test_encrypt_database_shape_and_split(e2e_keys, data_rng):
    pk = e2e_keys.public
    rows = make_rows(data_rng, 5, 4)
    docs = encrypt_database(pk, rows, rng=data_rng)
    s2, s1, ids = docs["s2"], docs["s1"], docs["ids"]
    assert (s2["owner"], s1["owner"]) == ("s2", "s1")
    assert s2["row_offset"] == 0 and s1["row_offset"] == 2
    assert len(s2["rows"]) == 2 and len(s1["rows"]) == 3
    assert s1["dim"] == s2["dim"] == 4
    assert identities_from_doc(ids) == [ident for ident, _ in rows]
    # Row identities decrypt to global row indices.
    from pura.hexint import from_hex

    assert [dec(e2e_keys.private, from_hex(r["id"])) for r in s2["rows"]] == [0, 1]
    assert [dec(e2e_keys.private, from_hex(r["id"])) for r in s1["rows"]] == [2, 3, 4]


def test_encrypt_database_explicit_split(e2e_keys, data_rng):
    rows = make_rows(data_rng, 4, 3)
    docs = encrypt_database(e2e_keys.public, rows, rng=data_rng, split_at=0)
    assert len(docs["s2"]["rows"]) == 0 and len(docs["s1"]["rows"]) == 4
    docs = encrypt_database(e2e_keys.public, rows, rng=data_rng, split_at=4)
    assert len(docs["s2"]["rows"]) == 4 and len(docs["s1"]["rows"]) == 0
    with pytest.raises(DomainError):
        encrypt_database(e2e_keys.public, rows, rng=data_rng, split_at=5)


def test_encrypt_database_validation(e2e_keys, toy_keys, data_rng):
    with pytest.raises(DomainError):
        encrypt_database(e2e_keys.public, [])
    ragged = [("a", [0.1, 0.2]), ("b", [0.1])]
    with pytest.raises(DomainError):
        encrypt_database(e2e_keys.public, ragged, rng=data_rng)
    # The toy profile's distance bound cannot host scale-10⁴ features.
    with pytest.raises(ParameterError):
        encrypt_database(toy_keys.public, [("a", [0.5])], rng=data_rng)


def test_shard_roundtrip_and_inverses(e2e_keys, data_rng):
    pk = e2e_keys.public
    rows = make_rows(data_rng, 3, 4)
    docs = encrypt_database(pk, rows, rng=data_rng)
    shard = shard_from_doc(docs["s1"], pk)
    assert shard.owner == "s1" and shard.dim == 4
    assert len(shard) == 2
    for row in shard.rows:
        for ct, inv in zip(row.v_cts, row.v_invs):
            assert mulmod(ct, inv, pk.n_sq) == 1
    # Shard rows decrypt back to the quantized originals.
    from pura.encoding import decode_signed

    for shard_row, (_, features) in zip(shard.rows, rows[1:]):
        got = [
            decode_signed(dec(e2e_keys.private, ct), pk.n, pk.params.delta)
            for ct in shard_row.v_cts
        ]
        assert got == quantize_vector(features)


@pytest.mark.parametrize(
    "corrupt",
    [
        lambda d: d.update(version=2),
        lambda d: d.update(kind="blob"),
        lambda d: d.update(owner="s3"),
        lambda d: d.update(n="ff"),
        lambda d: d.update(dim=0),
        lambda d: d.update(row_offset=-1),
        lambda d: d.update(rows="nope"),
        lambda d: d["rows"][0].update(id="xyz"),
        lambda d: d["rows"][0]["v"].pop(),
        lambda d: d["rows"][0]["v"].__setitem__(0, "0"),
    ],
)
def test_shard_from_doc_rejects_corruption(e2e_keys, data_rng, corrupt):
    pk = e2e_keys.public
    docs = encrypt_database(pk, make_rows(data_rng, 2, 3), rng=data_rng)
    doc = docs["s1"]
    corrupt(doc)
    with pytest.raises(KeyFormatError):
        shard_from_doc(doc, pk)


def test_threshold_doc_roundtrip(e2e_keys, data_rng):
    pk = e2e_keys.public
    doc = encrypt_threshold(pk, 12345, rng=data_rng)
    ct = threshold_from_doc(doc, pk)
    assert dec(e2e_keys.private, ct) == 12345
    with pytest.raises(DomainError):
        encrypt_threshold(pk, 0, rng=data_rng)
    with pytest.raises(DomainError):
        encrypt_threshold(pk, pk.params.delta, rng=data_rng)
    doc["epsilon"] = "zz"
    with pytest.raises(KeyFormatError):
        threshold_from_doc(doc, pk)


def test_identities_doc_validation():
    with pytest.raises(KeyFormatError):
        identities_from_doc({"version": 1, "kind": "ids", "ids": [1, 2]})
    with pytest.raises(KeyFormatError):
        identities_from_doc({"version": 1, "kind": "shard", "ids": ["a"]})


# -- encrypted distances ----------------------------------------------------


def test_shard_distances_match_plaintext(e2e_keys, data_rng):
    pk = e2e_keys.public
    rows = make_rows(data_rng, 4, 5)
    probe = [data_rng.random() for _ in range(5)]
    docs = encrypt_database(pk, rows, rng=data_rng, split_at=0)
    shard = shard_from_doc(docs["s1"], pk)  # all four rows

    from pura.encoding import encode_signed

    probe_q = quantize_vector(probe)
    probe_cts = [
        enc(pk, encode_signed(v, pk.n, pk.params.delta), data_rng) for v in probe_q
    ]
    with protocol_pair(e2e_keys) as (ctx, conn, _):
        dists = shard_distances(ctx, conn, shard, probe_cts)
    got = [dec(e2e_keys.private, ct) for ct in dists]
    want = [squared_distance(probe_q, quantize_vector(f)) for _, f in rows]
    assert got == want


def test_shard_distances_rejects_dimension_mismatch(e2e_keys, data_rng):
    pk = e2e_keys.public
    docs = encrypt_database(pk, make_rows(data_rng, 2, 3), rng=data_rng)
    shard = shard_from_doc(docs["s1"], pk)
    with protocol_pair(e2e_keys) as (ctx, conn, _):
        with pytest.raises(DomainError):
            shard_distances(ctx, conn, shard, [1, 2])


# -- the full pipeline -------------------------------------------------------


def test_pipeline_matches_baseline(e2e_keys, data_rng):
    rows = make_rows(data_rng, 6, 6)
    eps_raw = threshold_raw(0.4)
    probes = [
        list(rows[2][1]),                              # exact match
        [min(1.0, v + 0.005) for v in rows[4][1]],     # near match
        [data_rng.random() for _ in range(6)],         # random
        [1.0 - v for v in rows[0][1]],                 # far
    ]
    with local_pipeline(e2e_keys, rows, eps_raw) as pipe:
        for probe in probes:
            gamma, accepted = pipe.recognize(probe, eps_raw)
            want_gamma, want_accept, _ = recognize_plain(rows, probe, eps_raw)
            assert (gamma, accepted) == (want_gamma, want_accept)


@pytest.mark.parametrize("split_at", [0, 1, 3, 5, 6])
def test_pipeline_split_invariance(e2e_keys, data_rng, split_at):
    """The answer cannot depend on where the database is cut."""
    rows = make_rows(data_rng, 6, 4)
    eps_raw = threshold_raw(0.3)
    probe = [min(1.0, v + 0.002) for v in rows[3][1]]
    want = recognize_plain(rows, probe, eps_raw)[:2]
    with local_pipeline(e2e_keys, rows, eps_raw, split_at=split_at) as pipe:
        assert pipe.recognize(probe, eps_raw) == want


def test_pipeline_single_row_database(e2e_keys, data_rng):
    rows = make_rows(data_rng, 1, 4)
    eps_raw = threshold_raw(0.25)
    with local_pipeline(e2e_keys, rows, eps_raw) as pipe:
        gamma, accepted = pipe.recognize(list(rows[0][1]), eps_raw)
        assert (gamma, accepted) == (0, True)
        probe = [1.0 - v for v in rows[0][1]]
        want = recognize_plain(rows, probe, eps_raw)[:2]
        assert pipe.recognize(probe, eps_raw) == want


def test_pipeline_with_pools(e2e_keys, data_rng):
    from pura.pool import RandomnessPool

    pk = e2e_keys.public
    rows = make_rows(data_rng, 4, 4)
    eps_raw = threshold_raw(0.3)
    probe = [data_rng.random() for _ in range(4)]
    want = recognize_plain(rows, probe, eps_raw)[:2]

    pools = {
        "s1": RandomnessPool(pk, targets={"square": 64, "smin": 16, "zero": 16}),
        "s2": RandomnessPool(pk, targets={"square": 64, "smin": 16, "zero": 16}),
    }
    for pool in pools.values():
        pool.fill()
    with local_pipeline(e2e_keys, rows, eps_raw, pools=pools) as pipe:
        assert pipe.recognize(probe, eps_raw) == want
    # The servers actually consumed pooled material.
    assert pools["s1"].counters()["square"]["drawn"] > 0
    assert pools["s2"].counters()["square"]["drawn"] > 0


def test_pipeline_concurrent_probes(e2e_keys, data_rng):
    rows = make_rows(data_rng, 4, 4)
    eps_raw = threshold_raw(0.35)
    probes = [
        list(rows[1][1]),
        [data_rng.random() for _ in range(4)],
        [data_rng.random() for _ in range(4)],
    ]
    wants = [recognize_plain(rows, p, eps_raw)[:2] for p in probes]
    results = [None] * len(probes)
    with local_pipeline(e2e_keys, rows, eps_raw, workers=3) as pipe:

        def run(k):
            results[k] = pipe.recognize(probes[k], eps_raw)

        threads = [threading.Thread(target=run, args=(k,)) for k in range(len(probes))]
        for t in threads:
            t.start()
        for t in threads:
            t.join(timeout=120)
    assert results == wants


def test_pipeline_relays_probe_errors_to_client(e2e_keys, data_rng):
    rows = make_rows(data_rng, 2, 4)
    eps_raw = threshold_raw(0.3)
    with local_pipeline(e2e_keys, rows, eps_raw) as pipe:
        with pytest.raises(ProtocolError, match="peer reported"):
            # Five components against a four-dimensional database.
            pipe.recognize([0.1, 0.2, 0.3, 0.4, 0.5], eps_raw)
        # The pipeline stays healthy for the next request.
        probe = list(rows[0][1])
        assert pipe.recognize(probe, eps_raw) == (0, True)


def test_client_threshold_validation(e2e_keys, data_rng):
    rows = make_rows(data_rng, 2, 4)
    eps_raw = threshold_raw(0.3)
    with local_pipeline(e2e_keys, rows, eps_raw) as pipe:
        with pytest.raises(DomainError):
            pipe.recognize(list(rows[0][1]), 0)
        with pytest.raises(DomainError):
            pipe.recognize(list(rows[0][1]), e2e_keys.public.params.delta)


def test_server_node_validation(e2e_keys, data_rng):
    pk = e2e_keys.public
    docs = encrypt_database(pk, make_rows(data_rng, 2, 3), rng=data_rng)
    shard1 = shard_from_doc(docs["s1"], pk)
    ctx = ProtocolContext(pk, e2e_keys.share1)
    with pytest.raises(DomainError):
        ServerNode("s3", ctx, shard1)
    with pytest.raises(DomainError):
        ServerNode("s1", ctx, shard1)  # missing threshold
    with pytest.raises(DomainError):
        ServerNode("s2", ctx, shard1)  # shard belongs to s1
