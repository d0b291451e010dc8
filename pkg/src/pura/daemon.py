"""Long-running server process for one of the two recognition servers.

A daemon loads its key share and shard from disk, listens on a TCP
port, and classifies every inbound connection by its hello role: the
other server attaches as the peer link, everything else is treated as
a client.  Exactly one side dials the peer link; by convention the
config that carries a ``peer`` address is the dialing side.

Nothing sensitive is ever logged: log lines carry roles, counts, and
addresses, never key material, features, distances, or payload bytes.
"""

import json
import logging
import os
import signal
import threading
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

from .engine import ServerNode, shard_from_doc, threshold_from_doc
from .errors import (
    KeyFormatError,
    PuraError,
    TransportError,
    TransportTimeoutError,
)
from .paillier import public_key_from_doc, share_from_doc
from .pool import RandomnessPool
from .sessions import ProtocolContext
from .transport import Connection, Listener, client_hello, connect_tcp, server_hello

log = logging.getLogger("pura.daemon")

DEFAULT_S1_PORT = 7101
DEFAULT_S2_PORT = 7102


def _expect(doc: dict, key: str, kinds, what: str):
    value = doc.get(key)
    if not isinstance(value, kinds) or isinstance(value, bool):
        raise KeyFormatError("%s: %r must be %s" % (what, key, kinds))
    return value


def _address(doc: dict, key: str, what: str) -> Tuple[str, int]:
    entry = _expect(doc, key, dict, what)
    host = entry.get("host")
    port = entry.get("port")
    if not isinstance(host, str) or not host:
        raise KeyFormatError("%s: %r needs a host string" % (what, key))
    if not isinstance(port, int) or isinstance(port, bool) or not 0 <= port < 65536:
        raise KeyFormatError("%s: %r needs a port in [0, 65536)" % (what, key))
    return host, port


@dataclass
class ServerConfig:
    """Parsed server configuration."""

    role: str
    listen: Tuple[str, int]
    public_key_path: str
    share_path: str
    shard_path: str
    epsilon_path: Optional[str] = None
    peer: Optional[Tuple[str, int]] = None
    pool_targets: Optional[Dict[str, int]] = None
    workers: int = 2
    dial_retry_seconds: float = 30.0


def load_config(path: str) -> ServerConfig:
    """Read and validate a server config JSON file.

    Relative file paths inside the config resolve against the config
    file's own directory, so a config directory can be moved as a unit.
    """
    what = "server config %s" % path
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise KeyFormatError("%s: %s" % (what, exc)) from exc
    except ValueError as exc:
        raise KeyFormatError("%s: invalid JSON: %s" % (what, exc)) from exc
    if not isinstance(doc, dict):
        raise KeyFormatError("%s: top level must be an object" % what)
    if doc.get("version") != 1:
        raise KeyFormatError("%s: unsupported version %r" % (what, doc.get("version")))
    role = _expect(doc, "role", str, what)
    if role not in ("s1", "s2"):
        raise KeyFormatError("%s: role must be 's1' or 's2'" % what)

    base = os.path.dirname(os.path.abspath(path))

    def resolve(key, required=True):
        value = doc.get(key)
        if value is None and not required:
            return None
        if not isinstance(value, str) or not value:
            raise KeyFormatError("%s: %r must be a file path" % (what, key))
        return os.path.join(base, value)

    epsilon_path = resolve("epsilon", required=(role == "s1"))
    if role == "s2" and doc.get("epsilon") is not None:
        raise KeyFormatError("%s: only server 1 holds the threshold" % what)

    peer = _address(doc, "peer", what) if doc.get("peer") is not None else None

    pool_targets = None
    if doc.get("pool") is not None:
        entry = _expect(doc, "pool", dict, what)
        targets = entry.get("targets", {})
        if not isinstance(targets, dict) or not all(
            isinstance(k, str) and isinstance(v, int) and not isinstance(v, bool)
            for k, v in targets.items()
        ):
            raise KeyFormatError("%s: pool targets must map kind to count" % what)
        pool_targets = dict(targets)

    workers = doc.get("workers", 2)
    if not isinstance(workers, int) or isinstance(workers, bool) or workers < 1:
        raise KeyFormatError("%s: workers must be a positive integer" % what)

    return ServerConfig(
        role=role,
        listen=_address(doc, "listen", what),
        public_key_path=resolve("public_key"),
        share_path=resolve("share"),
        shard_path=resolve("shard"),
        epsilon_path=epsilon_path,
        peer=peer,
        pool_targets=pool_targets,
        workers=workers,
    )


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise KeyFormatError("%s: %s" % (path, exc)) from exc
    except ValueError as exc:
        raise KeyFormatError("%s: invalid JSON: %s" % (path, exc)) from exc
    if not isinstance(doc, dict):
        raise KeyFormatError("%s: top level must be an object" % path)
    return doc


class ServerDaemon:
    """Owns a listener, a ServerNode, and the peer link for one server."""

    def __init__(self, config: ServerConfig):
        self.config = config
        pk = public_key_from_doc(_load_json(config.public_key_path))
        share = share_from_doc(_load_json(config.share_path), pk)
        shard = shard_from_doc(_load_json(config.shard_path), pk)
        epsilon_ct = None
        if config.role == "s1":
            epsilon_ct = threshold_from_doc(_load_json(config.epsilon_path), pk)
        self.public = pk
        self.pool = None
        if config.pool_targets is not None:
            self.pool = RandomnessPool(pk, targets=config.pool_targets)
        ctx = ProtocolContext(pk, share, pool=self.pool)
        self.node = ServerNode(
            config.role, ctx, shard, epsilon_ct=epsilon_ct, workers=config.workers
        )
        self.listener: Optional[Listener] = None
        self._stop = threading.Event()
        self._peer_ready = threading.Event()
        self._threads = []
        self._lock = threading.Lock()
        self._client_conns = []

    # -- lifecycle --------------------------------------------------------

    def start(self) -> Tuple[str, int]:
        """Bind the listener, start accepting, and bring up the peer
        link (dialing if configured).  Returns the bound address."""
        host, port = self.config.listen
        self.listener = Listener(host, port)
        bound = (self.listener.host, self.listener.port)
        log.info("%s listening on %s:%d", self.config.role, *bound)
        if self.pool is not None:
            self.pool.fill()
            self.pool.start_refill_thread()
            log.info("%s randomness pool filled", self.config.role)
        accept = threading.Thread(
            target=self._accept_loop, name="%s-accept" % self.config.role, daemon=True
        )
        accept.start()
        self._threads.append(accept)
        if self.config.peer is not None:
            self._dial_peer()
        return bound

    def wait_peer(self, timeout: Optional[float] = None) -> bool:
        return self._peer_ready.wait(timeout)

    def run_forever(self) -> None:
        """Install signal handlers and block until stopped."""

        def _on_signal(signum, frame):
            log.info("%s received signal %d, shutting down", self.config.role, signum)
            self._stop.set()

        signal.signal(signal.SIGTERM, _on_signal)
        signal.signal(signal.SIGINT, _on_signal)
        while not self._stop.wait(0.2):
            pass
        self.close()

    def close(self) -> None:
        self._stop.set()
        if self.listener is not None:
            self.listener.close()
        self.node.close()
        if self.node.peer is not None:
            self.node.peer.close()
        with self._lock:
            conns = list(self._client_conns)
        for conn in conns:
            conn.close()
        if self.pool is not None:
            self.pool.close()
        for thread in self._threads:
            thread.join(timeout=5)
        log.info("%s stopped", self.config.role)

    # -- connection plumbing ----------------------------------------------

    def _dial_peer(self) -> None:
        host, port = self.config.peer
        deadline = self.config.dial_retry_seconds
        waited = 0.0
        while not self._stop.is_set():
            try:
                conn = connect_tcp(host, port, timeout=5.0)
            except TransportError:
                if waited >= deadline:
                    raise
                self._stop.wait(0.25)
                waited += 0.25
                continue
            peer_role = client_hello(conn, self.config.role)
            if peer_role not in ("s1", "s2") or peer_role == self.config.role:
                conn.close()
                raise PuraError("peer at %s:%d announced role %r" % (host, port, peer_role))
            self.node.connect_peer(conn)
            self._peer_ready.set()
            log.info("%s peer link established to %s", self.config.role, peer_role)
            return

    def _accept_loop(self) -> None:
        while not self._stop.is_set():
            try:
                conn = self.listener.accept(timeout=0.25)
            except TransportTimeoutError:
                continue
            except TransportError:
                return
            thread = threading.Thread(
                target=self._handshake,
                args=(conn,),
                name="%s-hello" % self.config.role,
                daemon=True,
            )
            thread.start()
            self._threads.append(thread)

    def _handshake(self, conn: Connection) -> None:
        try:
            peer_role = server_hello(conn, self.config.role, timeout=10.0)
        except PuraError as exc:
            log.warning("%s dropped a connection during hello: %s",
                        self.config.role, exc)
            conn.close()
            return
        if peer_role in ("s1", "s2"):
            if peer_role == self.config.role or self.node.peer is not None:
                log.warning("%s rejected duplicate peer hello", self.config.role)
                conn.close()
                return
            self.node.connect_peer(conn)
            self._peer_ready.set()
            log.info("%s peer link accepted from %s", self.config.role, peer_role)
            return
        # Anything else is a client; hold it until the peer link exists
        # so early probes don't fail spuriously.
        if not self._peer_ready.wait(timeout=30.0):
            log.warning("%s dropping client: no peer link", self.config.role)
            conn.close()
            return
        with self._lock:
            self._client_conns.append(conn)
        self.node.serve_client(conn)
        log.info("%s serving a client connection", self.config.role)
