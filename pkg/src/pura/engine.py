"""Twin-server encrypted recognition pipeline.

Roles
-----

* The enrolling organisation quantises and encrypts its feature
  database, splits the rows into two shards, and hands one shard and one
  key share to each server (rows ``[0, ⌊Υ/2⌋)`` to server 2, the rest to
  server 1).  It also encrypts the acceptance threshold ε for server 1.
* A client encrypts a probe vector, sends it to server 1 along with an
  encrypted random mask R, registers the request with server 2, and
  receives γ + R, where γ = min(min_i dist_i, ε).  It accepts iff
  γ < ε.
* The servers jointly compute everything on ciphertexts: encrypted
  differences, squared via the batched squaring protocol, summed
  homomorphically per row, folded to a minimum with the secure-minimum
  protocol (each server folds its own shard with the other responding),
  clamped by ε, masked, and threshold-decrypted — so neither server
  ever sees a feature value, a distance, γ, or the accept decision.

Shard files carry every ciphertext in canonical hex along with the
public modulus so a shard can never silently be used with the wrong
key.  Database inverses needed for the encrypted differences are
precomputed at load time.
"""

from __future__ import annotations

import contextlib
import secrets
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

from ._mathcore import invmod_many, mulmod, prod_mod
from .batch import batch_square
from .encoding import encode_signed, quantize_vector
from .errors import (
    DomainError,
    IntegrityError,
    KeyFormatError,
    ParameterError,
    ProtocolError,
    PuraError,
)
from .hexint import from_hex, to_hex
from .paillier import (
    PublicKey,
    enc,
    hom_add,
    pdec,
    validate_ciphertext,
)
from .params import QUANT_SCALE
from .sessions import (
    ProtocolContext,
    expect_reply,
    gen_mask_blinding,
    serve_connection,
    wire_ct,
    wire_ct_list,
    wire_hex,
    wire_text,
)
from .smin import smin_n
from .transport import Connection, Session, new_session_id

__all__ = [
    "ShardRow",
    "Shard",
    "encrypt_database",
    "encrypt_threshold",
    "threshold_from_doc",
    "shard_from_doc",
    "identities_from_doc",
    "shard_distances",
    "shard_min",
    "ServerNode",
    "recognize",
    "local_pipeline",
    "LocalPipeline",
]

DOC_VERSION = 1


class ShardRow(NamedTuple):
    id_ct: int
    v_cts: Tuple[int, ...]
    v_invs: Tuple[int, ...]  # modular inverses of v_cts, mod N²


@dataclass
class Shard:
    owner: str
    row_offset: int
    dim: int
    rows: List[ShardRow]

    def __len__(self) -> int:
        return len(self.rows)


# -- enrolment --------------------------------------------------------------


def _check_feature_geometry(pk: PublicKey, dim: int) -> None:
    # Largest possible squared distance must stay below δ so it remains
    # a valid operand for the minimum protocol.
    worst = dim * QUANT_SCALE * QUANT_SCALE
    if worst >= pk.params.delta:
        raise ParameterError(
            "dimension %d can reach distance %d, beyond the %d-bit operand bound"
            % (dim, worst, pk.params.ell)
        )


def encrypt_database(
    pk: PublicKey,
    feature_rows: Sequence[Tuple[str, Sequence[float]]],
    rng=None,
    split_at: Optional[int] = None,
) -> Dict[str, dict]:
    """Quantise, encrypt, and split a feature database.

    Returns ``{"s1": shard_doc, "s2": shard_doc, "ids": ids_doc}``.
    Server 2 receives rows ``[0, split)`` (default: the lower half),
    server 1 the rest.  Row identities are encrypted as their global row
    index; the plaintext identifier list stays with the organisation in
    the ids document.
    """
    if not feature_rows:
        raise DomainError("database is empty")
    dim = len(feature_rows[0][1])
    _check_feature_geometry(pk, dim)
    split = len(feature_rows) // 2 if split_at is None else split_at
    if not 0 <= split <= len(feature_rows):
        raise DomainError("split point %d outside [0, %d]" % (split, len(feature_rows)))

    def encrypt_rows(rows, offset):
        out = []
        for local_idx, (ident, features) in enumerate(rows):
            if len(features) != dim:
                raise DomainError(
                    "row %r has %d components, expected %d"
                    % (ident, len(features), dim)
                )
            values = quantize_vector(features)
            encoded = [encode_signed(v, pk.n, pk.params.delta) for v in values]
            out.append(
                {
                    "id": to_hex(enc(pk, offset + local_idx, rng)),
                    "v": [to_hex(enc(pk, m, rng)) for m in encoded],
                }
            )
        return out

    def shard_doc(owner, offset, rows):
        return {
            "version": DOC_VERSION,
            "kind": "shard",
            "owner": owner,
            "n": to_hex(pk.n),
            "dim": dim,
            "row_offset": offset,
            "rows": rows,
        }

    ids_doc = {
        "version": DOC_VERSION,
        "kind": "ids",
        "ids": [ident for ident, _ in feature_rows],
    }
    return {
        "s2": shard_doc("s2", 0, encrypt_rows(feature_rows[:split], 0)),
        "s1": shard_doc("s1", split, encrypt_rows(feature_rows[split:], split)),
        "ids": ids_doc,
    }


def encrypt_threshold(pk: PublicKey, epsilon_raw: int, rng=None) -> dict:
    if not 0 < epsilon_raw < pk.params.delta:
        raise DomainError(
            "raw threshold must lie in (0, 2**%d)" % pk.params.ell
        )
    return {
        "version": DOC_VERSION,
        "kind": "threshold",
        "n": to_hex(pk.n),
        "epsilon": to_hex(enc(pk, epsilon_raw, rng)),
    }


def _check_doc(doc: dict, kind: str, pk: Optional[PublicKey] = None) -> None:
    if not isinstance(doc, dict):
        raise KeyFormatError("%s document is not an object" % kind)
    if doc.get("version") != DOC_VERSION:
        raise KeyFormatError("unsupported %s document version %r" % (kind, doc.get("version")))
    if doc.get("kind") != kind:
        raise KeyFormatError("expected a %r document, found %r" % (kind, doc.get("kind")))
    if pk is not None:
        try:
            n = from_hex(doc.get("n"))
        except ValueError as exc:
            raise KeyFormatError("document modulus: %s" % exc) from None
        if n != pk.n:
            raise KeyFormatError("document belongs to a different key")


def threshold_from_doc(doc: dict, pk: PublicKey) -> int:
    _check_doc(doc, "threshold", pk)
    try:
        return validate_ciphertext(pk, from_hex(doc.get("epsilon")))
    except (ValueError, DomainError) as exc:
        raise KeyFormatError("threshold ciphertext: %s" % exc) from None


def identities_from_doc(doc: dict) -> List[str]:
    _check_doc(doc, "ids")
    ids = doc.get("ids")
    if not isinstance(ids, list) or not all(isinstance(i, str) and i for i in ids):
        raise KeyFormatError("ids document carries no identifier list")
    return list(ids)


def shard_from_doc(doc: dict, pk: PublicKey) -> Shard:
    """Validate a shard document and precompute the difference inverses."""
    _check_doc(doc, "shard", pk)
    owner = doc.get("owner")
    if owner not in ("s1", "s2"):
        raise KeyFormatError("shard owner must be 's1' or 's2'")
    dim = doc.get("dim")
    if not isinstance(dim, int) or isinstance(dim, bool) or dim < 1:
        raise KeyFormatError("shard dimension must be a positive integer")
    offset = doc.get("row_offset")
    if not isinstance(offset, int) or isinstance(offset, bool) or offset < 0:
        raise KeyFormatError("shard row offset must be a non-negative integer")
    raw_rows = doc.get("rows")
    if not isinstance(raw_rows, list):
        raise KeyFormatError("shard rows must be a list")

    ids: List[int] = []
    flat: List[int] = []
    for idx, row in enumerate(raw_rows):
        if not isinstance(row, dict):
            raise KeyFormatError("row %d is not an object" % idx)
        try:
            ids.append(validate_ciphertext(pk, from_hex(row.get("id"))))
            vals = row.get("v")
            if not isinstance(vals, list) or len(vals) != dim:
                raise KeyFormatError("row %d must carry %d components" % (idx, dim))
            for entry in vals:
                flat.append(validate_ciphertext(pk, from_hex(entry)))
        except (ValueError, DomainError) as exc:
            raise KeyFormatError("row %d: %s" % (idx, exc)) from None

    inverses = invmod_many(flat, pk.n_sq) if flat else []
    rows = [
        ShardRow(
            ids[k],
            tuple(flat[k * dim : (k + 1) * dim]),
            tuple(inverses[k * dim : (k + 1) * dim]),
        )
        for k in range(len(raw_rows))
    ]
    return Shard(owner=owner, row_offset=offset, dim=dim, rows=rows)


# -- per-shard distance work ------------------------------------------------


def shard_distances(
    ctx: ProtocolContext,
    conn: Connection,
    shard: Shard,
    probe_cts: Sequence[int],
    timeout: float = 60.0,
) -> List[int]:
    """Encrypted squared distance between the probe and every shard row."""
    if len(probe_cts) != shard.dim:
        raise DomainError(
            "probe has %d components, shard expects %d" % (len(probe_cts), shard.dim)
        )
    if not shard.rows:
        return []
    n_sq = ctx.public.n_sq
    diffs = []
    for row in shard.rows:
        for p_ct, v_inv in zip(probe_cts, row.v_invs):
            diffs.append(mulmod(p_ct, v_inv, n_sq))  # ⟦p_j - v_j⟧
    squares = batch_square(ctx, conn, diffs, timeout)
    dim = shard.dim
    return [
        prod_mod(squares[k * dim : (k + 1) * dim], n_sq)
        for k in range(len(shard.rows))
    ]


def shard_min(
    ctx: ProtocolContext,
    conn: Connection,
    shard: Shard,
    probe_cts: Sequence[int],
    timeout: float = 60.0,
) -> int:
    return smin_n(ctx, conn, shard_distances(ctx, conn, shard, probe_cts, timeout), timeout)


# -- the servers -------------------------------------------------------------


class _DminWait:
    __slots__ = ("event", "d_ct", "empty", "error")

    def __init__(self):
        self.event = threading.Event()
        self.d_ct: Optional[int] = None
        self.empty = False
        self.error: Optional[str] = None


class _Claim:
    __slots__ = ("sess", "message")

    def __init__(self):
        self.sess: Optional[Session] = None
        self.message: Optional[Tuple[str, dict]] = None


class ServerNode:
    """One of the two servers.

    Attach the inter-server link with :meth:`connect_peer` and any
    number of client links with :meth:`serve_client`; each runs its own
    dispatch thread.  Long-running request work goes through a small
    worker pool so dispatch never blocks on the peer.
    """

    def __init__(
        self,
        role: str,
        ctx: ProtocolContext,
        shard: Shard,
        epsilon_ct: Optional[int] = None,
        workers: int = 2,
        request_timeout: float = 300.0,
    ):
        if role not in ("s1", "s2"):
            raise DomainError("role must be 's1' or 's2'")
        if role == "s1":
            if epsilon_ct is None:
                raise DomainError("server 1 requires the encrypted threshold")
            validate_ciphertext(ctx.public, epsilon_ct)
        if shard.owner != role:
            raise DomainError("shard belongs to %r, not %r" % (shard.owner, role))
        self.role = role
        self.ctx = ctx
        self.shard = shard
        self.epsilon_ct = epsilon_ct
        self.request_timeout = request_timeout
        self.peer: Optional[Connection] = None
        self._executor = ThreadPoolExecutor(
            max_workers=workers, thread_name_prefix="%s-worker" % role
        )
        self._threads: List[threading.Thread] = []
        self._stop = threading.Event()
        self._lock = threading.Lock()
        self._dmin_waits: Dict[str, _DminWait] = {}
        self._claims: Dict[str, _Claim] = {}

    # -- wiring ---------------------------------------------------------

    def _spawn_serve(self, conn: Connection, handlers: dict, name: str) -> None:
        thread = threading.Thread(
            target=serve_connection,
            args=(self.ctx, conn, handlers, self._stop),
            name=name,
            daemon=True,
        )
        thread.start()
        self._threads.append(thread)

    def connect_peer(self, conn: Connection) -> None:
        if self.peer is not None:
            raise DomainError("peer link already attached")
        self.peer = conn
        from .batch import respond_batch_smul, respond_batch_square
        from .smin import respond_smin

        handlers = {
            "bsq1": respond_batch_square,
            "bsm1": respond_batch_smul,
            "sm1": respond_smin,
            "probe": lambda ctx, sess, payload: self._executor.submit(
                self._peer_probe_job, payload
            ),
            "dmin": lambda ctx, sess, payload: self._on_dmin(payload),
            "mask": lambda ctx, sess, payload: self._on_mask(payload),
        }
        self._spawn_serve(conn, handlers, "%s-peer" % self.role)

    def serve_client(self, conn: Connection) -> None:
        """Dispatch one client connection; clients may only open the
        request steps, never the key-holder protocols."""
        if self.role == "s1":
            handlers = {
                "probe": lambda ctx, sess, payload: self._executor.submit(
                    self._client_probe_job, sess, payload
                )
            }
        else:
            handlers = {
                "claim": lambda ctx, sess, payload: self._on_claim(sess, payload)
            }
        self._spawn_serve(conn, handlers, "%s-client" % self.role)

    def close(self) -> None:
        self._stop.set()
        self._executor.shutdown(wait=False)
        for thread in self._threads:
            thread.join(timeout=5)

    # -- server 1: drives a recognition ----------------------------------

    def _client_probe_job(self, client_sess: Session, payload: dict) -> None:
        rid = "unknown"
        try:
            rid = wire_text(payload, "request_id")
            self._run_probe(rid, payload)
        except PuraError as exc:
            self._relay_error(rid, str(exc))
            try:
                client_sess.send(
                    "error", {"message": str(exc), "request_id": rid}
                )
            except PuraError:
                pass

    def _run_probe(self, rid: str, payload: dict) -> None:
        pk = self.ctx.public
        probe_cts = wire_ct_list(pk, payload, "p", self.shard.dim)
        mask_ct = wire_ct(pk, payload, "r")

        wait = _DminWait()
        with self._lock:
            self._dmin_waits[rid] = wait
        try:
            fwd = self.peer.open_session("fwd")
            fwd.send(
                "probe",
                {"p": [to_hex(ct) for ct in probe_cts], "request_id": rid},
            )
            fwd.close()

            own_min = (
                shard_min(self.ctx, self.peer, self.shard, probe_cts, self.request_timeout)
                if self.shard.rows
                else None
            )

            if not wait.event.wait(self.request_timeout):
                raise ProtocolError("peer sent no shard minimum in time")
            if wait.error:
                raise ProtocolError("peer failed: %s" % wait.error)

            operands = [ct for ct in (own_min, wait.d_ct) if ct is not None]
            if not operands:
                raise ProtocolError("both shards are empty")
            operands.append(self.epsilon_ct)
            gamma_ct = smin_n(self.ctx, self.peer, operands, self.request_timeout)

            masked = hom_add(pk, gamma_ct, mask_ct)
            part = pdec(self.ctx.share, masked)
            out = self.peer.open_session("msk")
            out.send(
                "mask",
                {"m": to_hex(masked), "m1": to_hex(part.value), "request_id": rid},
            )
            out.close()
        finally:
            with self._lock:
                self._dmin_waits.pop(rid, None)

    def _relay_error(self, rid: str, message: str) -> None:
        """Push a failure through server 2 so the waiting client hears it."""
        if self.peer is None:
            return
        try:
            sess = self.peer.open_session("msk")
            sess.send("mask", {"request_id": rid, "error": message})
            sess.close()
        except PuraError:
            pass

    def _on_dmin(self, payload: dict) -> None:
        rid = wire_text(payload, "request_id")
        with self._lock:
            wait = self._dmin_waits.get(rid)
        if wait is None:
            raise ProtocolError("no active request %r" % rid)
        if "error" in payload:
            wait.error = wire_text(payload, "error", 1024)
        elif payload.get("empty") is True:
            wait.empty = True
        else:
            wait.d_ct = wire_ct(self.ctx.public, payload, "d")
        wait.event.set()

    # -- server 2: shard fold and result delivery ------------------------

    def _peer_probe_job(self, payload: dict) -> None:
        rid = "unknown"
        try:
            rid = wire_text(payload, "request_id")
            probe_cts = wire_ct_list(self.ctx.public, payload, "p", self.shard.dim)
            if self.shard.rows:
                d_ct = shard_min(
                    self.ctx, self.peer, self.shard, probe_cts, self.request_timeout
                )
                reply = {"d": to_hex(d_ct), "request_id": rid}
            else:
                reply = {"empty": True, "request_id": rid}
        except PuraError as exc:
            reply = {"error": str(exc), "request_id": rid}
        try:
            sess = self.peer.open_session("dmn")
            sess.send("dmin", reply)
            sess.close()
        except PuraError:
            pass

    def _on_mask(self, payload: dict) -> None:
        rid = wire_text(payload, "request_id")
        if "error" in payload:
            self._deliver(
                rid,
                ("error", {"message": wire_text(payload, "error", 1024), "request_id": rid}),
            )
            return
        pk = self.ctx.public
        masked_ct = wire_ct(pk, payload, "m")
        peer_part = wire_ct(pk, payload, "m1")
        masked = self.ctx.decrypt_with_peer(masked_ct, peer_part)
        # γ < 2^ℓ and R < 2^σ, so anything beyond their sum is corrupt.
        if masked >= pk.params.delta + (1 << pk.params.sigma):
            self._deliver(
                rid,
                ("error", {"message": "masked result out of range", "request_id": rid}),
            )
            return
        self._deliver(rid, ("result", {"masked": to_hex(masked), "request_id": rid}))

    def _on_claim(self, sess: Session, payload: dict) -> None:
        rid = wire_text(payload, "request_id")
        with self._lock:
            claim = self._claims.setdefault(rid, _Claim())
            claim.sess = sess
            message = claim.message
            if message is not None:
                self._claims.pop(rid, None)
        if message is not None:
            sess.send(*message)

    def _deliver(self, rid: str, message: Tuple[str, dict]) -> None:
        with self._lock:
            claim = self._claims.setdefault(rid, _Claim())
            claim.message = message
            sess = claim.sess
            if sess is not None:
                self._claims.pop(rid, None)
        if sess is not None:
            try:
                sess.send(*message)
            except PuraError:
                pass


# -- the client --------------------------------------------------------------


def recognize(
    pk: PublicKey,
    s1_conn: Connection,
    s2_conn: Connection,
    features: Sequence[float],
    epsilon_raw: int,
    rng=None,
    timeout: float = 300.0,
) -> Tuple[int, bool]:
    """Run one recognition against the two servers.

    Returns ``(gamma, accepted)``: γ is the minimum quantized squared
    distance clamped by the threshold, and the accept decision is
    γ < epsilon_raw.  Only this caller ever sees either value.
    """
    if not 0 < epsilon_raw < pk.params.delta:
        raise DomainError("raw threshold must lie in (0, 2**%d)" % pk.params.ell)
    _check_feature_geometry(pk, len(features))
    rng = rng if rng is not None else secrets.SystemRandom()
    values = quantize_vector(features)
    probe_cts = [
        enc(pk, encode_signed(v, pk.n, pk.params.delta), rng) for v in values
    ]
    mask = gen_mask_blinding(pk, rng)
    rid = new_session_id("req")

    claim_sess = s2_conn.open_session("clm")
    probe_sess = s1_conn.open_session("prb")
    try:
        claim_sess.send("claim", {"request_id": rid})
        probe_sess.send(
            "probe",
            {
                "p": [to_hex(ct) for ct in probe_cts],
                "r": to_hex(mask.r_ct),
                "request_id": rid,
            },
        )
        payload = expect_reply(claim_sess, "result", timeout)
    finally:
        claim_sess.close()
        probe_sess.close()

    masked = wire_hex(payload, "masked")
    gamma = masked - mask.r
    if not 0 <= gamma < pk.params.delta:
        raise IntegrityError("unmasked result outside the distance range")
    return gamma, gamma < epsilon_raw


# -- in-process pipeline ------------------------------------------------------


@dataclass
class LocalPipeline:
    """Both servers plus a connected client, all in one process."""

    public: PublicKey
    s1: ServerNode
    s2: ServerNode
    s1_client: Connection
    s2_client: Connection
    _all_conns: List[Connection] = field(default_factory=list)

    def recognize(self, features, epsilon_raw, rng=None, timeout: float = 300.0):
        return recognize(
            self.public,
            self.s1_client,
            self.s2_client,
            features,
            epsilon_raw,
            rng=rng,
            timeout=timeout,
        )


@contextlib.contextmanager
def local_pipeline(
    material,
    feature_rows,
    epsilon_raw: int,
    rng=None,
    split_at: Optional[int] = None,
    pools: Optional[dict] = None,
    workers: int = 2,
):
    """Stand up the full twin-server pipeline over loopback transport.

    ``material`` is a :class:`~pura.paillier.KeyMaterial`; ``pools``
    optionally maps role name to a RandomnessPool.  Yields a
    :class:`LocalPipeline`.
    """
    from .transport import loopback_pair

    pk = material.public
    if not 0 < epsilon_raw < pk.params.delta:
        raise DomainError("raw threshold must lie in (0, 2**%d)" % pk.params.ell)
    docs = encrypt_database(pk, feature_rows, rng=rng, split_at=split_at)
    shard1 = shard_from_doc(docs["s1"], pk)
    shard2 = shard_from_doc(docs["s2"], pk)
    epsilon_ct = enc(pk, epsilon_raw, rng)

    pools = pools or {}
    ctx1 = ProtocolContext(pk, material.share1, rng=rng, pool=pools.get("s1"))
    ctx2 = ProtocolContext(pk, material.share2, rng=rng, pool=pools.get("s2"))
    node1 = ServerNode("s1", ctx1, shard1, epsilon_ct=epsilon_ct, workers=workers)
    node2 = ServerNode("s2", ctx2, shard2, workers=workers)

    p1, p2 = loopback_pair("peers")
    node1.connect_peer(p1)
    node2.connect_peer(p2)

    c1_client, c1_server = loopback_pair("s1cli")
    c2_client, c2_server = loopback_pair("s2cli")
    node1.serve_client(c1_server)
    node2.serve_client(c2_server)

    pipeline = LocalPipeline(
        public=pk,
        s1=node1,
        s2=node2,
        s1_client=c1_client,
        s2_client=c2_client,
        _all_conns=[p1, p2, c1_client, c1_server, c2_client, c2_server],
    )
    try:
        yield pipeline
    finally:
        node1.close()
        node2.close()
        for conn in pipeline._all_conns:
            conn.close()
