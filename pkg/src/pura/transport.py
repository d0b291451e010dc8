"""Framed, multiplexed message transport.

Wire format
-----------

Every message ("frame") is a 4-byte big-endian length prefix followed
by that many bytes of UTF-8 JSON.  The JSON body is a fixed envelope::

    {"v":1,"session":"<id>","step":"<name>","payload":{...}}

Producers emit the envelope fields in exactly that order with payload
keys recursively sorted and compact separators, so a given message has
exactly one byte representation.  Consumers accept any key order but
reject structural deviations (missing fields, unknown fields, unknown
steps, bad session identifiers).  Frames larger than 64 MiB are refused
in both directions.

Multiplexing
------------

A :class:`Connection` runs a receiver thread that parses frames and
routes them into per-session FIFO queues.  Sessions opened locally are
registered before their first message is sent; sessions first seen on
the wire are announced to :meth:`Connection.accept_session` so the
responding side can dispatch them.  Any transport-level error poisons
the connection: every pending and future receive raises it.

The same byte-stream interface backs real TCP sockets and in-memory
pipes, so loopback tests exercise the full codec path.
"""

from __future__ import annotations

import json
import queue
import re
import secrets
import socket
import struct
import threading
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .errors import (
    ConnectionClosedError,
    MalformedFrameError,
    OversizeFrameError,
    ProtocolError,
    TransportError,
    TransportTimeoutError,
)

__all__ = [
    "CONTROL_SESSIONS",
    "FRAME_CAP",
    "KNOWN_STEPS",
    "encode_envelope",
    "decode_envelope",
    "new_session_id",
    "MemoryStream",
    "Connection",
    "Session",
    "TransportStats",
    "loopback_pair",
    "connect_tcp",
    "Listener",
    "client_hello",
    "server_hello",
]

FRAME_CAP = 64 * 2**20
_HEADER = struct.Struct(">I")

KNOWN_STEPS = frozenset(
    {
        "hello",
        "bsq1",
        "bsq2",
        "bsm1",
        "bsm2",
        "sm1",
        "sm2",
        "probe",
        "claim",
        "dmin",
        "mask",
        "result",
        "error",
    }
)

#: Session ids consumed out of band by the hello helpers.  The receive
#: loop routes their frames but never announces them to
#: :meth:`Connection.accept_session`, so a hello racing ahead of the
#: acceptor cannot wedge a dispatch loop on a phantom session.
CONTROL_SESSIONS = frozenset({"hello"})

_SESSION_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._-]{0,63}$")


def new_session_id(prefix: str) -> str:
    """Fresh session identifier with a readable prefix."""
    sid = "%s.%s" % (prefix, secrets.token_hex(8))
    if not _SESSION_ID.match(sid):
        raise TransportError("invalid session id prefix %r" % prefix)
    return sid


def encode_envelope(session: str, step: str, payload: dict) -> bytes:
    """Serialise one message to its canonical byte form (no frame header)."""
    if not _SESSION_ID.match(session):
        raise TransportError("invalid session id %r" % session)
    if step not in KNOWN_STEPS:
        raise TransportError("unknown step %r" % step)
    if not isinstance(payload, dict):
        raise TransportError("payload must be a JSON object")
    try:
        body = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    except (TypeError, ValueError) as exc:
        raise TransportError("payload is not JSON-serialisable: %s" % exc) from exc
    text = '{"v":1,"session":%s,"step":%s,"payload":%s}' % (
        json.dumps(session),
        json.dumps(step),
        body,
    )
    return text.encode("utf-8")


def decode_envelope(data: bytes, offset: int = 0) -> Tuple[str, str, dict]:
    """Parse and validate one envelope; ``offset`` is only used to label
    errors with the stream position of the offending frame."""
    try:
        doc = json.loads(data.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedFrameError("frame is not valid JSON: %s" % exc, offset) from exc
    if not isinstance(doc, dict):
        raise MalformedFrameError("envelope is not a JSON object", offset)
    if set(doc) != {"v", "session", "step", "payload"}:
        raise MalformedFrameError(
            "envelope fields %s do not match the protocol" % sorted(doc), offset
        )
    if doc["v"] != 1:
        raise MalformedFrameError("unsupported protocol version %r" % doc["v"], offset)
    session, step, payload = doc["session"], doc["step"], doc["payload"]
    if not isinstance(session, str) or not _SESSION_ID.match(session):
        raise MalformedFrameError("invalid session id %r" % session, offset)
    if step not in KNOWN_STEPS:
        raise MalformedFrameError("unknown step %r" % step, offset)
    if not isinstance(payload, dict):
        raise MalformedFrameError("payload is not a JSON object", offset)
    return session, step, payload


class MemoryStream:
    """In-memory duplex byte stream; the loopback stand-in for a socket."""

    def __init__(self, inbox: "queue.Queue", outbox: "queue.Queue"):
        self._inbox = inbox
        self._outbox = outbox
        self._residue = b""
        self._closed = False

    @staticmethod
    def pair() -> Tuple["MemoryStream", "MemoryStream"]:
        a_to_b: "queue.Queue" = queue.Queue()
        b_to_a: "queue.Queue" = queue.Queue()
        return MemoryStream(b_to_a, a_to_b), MemoryStream(a_to_b, b_to_a)

    def sendall(self, data: bytes) -> None:
        if self._closed:
            raise ConnectionClosedError("stream is closed")
        self._outbox.put(bytes(data))

    def recv(self, maxsize: int) -> bytes:
        if self._residue:
            chunk, self._residue = self._residue[:maxsize], self._residue[maxsize:]
            return chunk
        if self._closed:
            return b""
        data = self._inbox.get()
        if data is None:  # peer closed
            self._inbox.put(None)  # keep returning EOF
            return b""
        chunk, self._residue = data[:maxsize], data[maxsize:]
        return chunk

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._outbox.put(None)
            self._inbox.put(None)


class _SocketStream:
    """Adapt a TCP socket to the byte-stream interface."""

    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._lock = threading.Lock()

    def sendall(self, data: bytes) -> None:
        try:
            self._sock.sendall(data)
        except OSError as exc:
            raise ConnectionClosedError("socket send failed: %s" % exc) from exc

    def recv(self, maxsize: int) -> bytes:
        try:
            return self._sock.recv(maxsize)
        except OSError:
            return b""

    def close(self) -> None:
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


@dataclass
class TransportStats:
    """Frame and byte counters, kept per connection."""

    frames_sent: int = 0
    frames_received: int = 0
    bytes_sent: int = 0
    bytes_received: int = 0
    steps_sent: Dict[str, int] = field(default_factory=dict)
    steps_received: Dict[str, int] = field(default_factory=dict)

    def copy(self) -> "TransportStats":
        return TransportStats(
            self.frames_sent,
            self.frames_received,
            self.bytes_sent,
            self.bytes_received,
            dict(self.steps_sent),
            dict(self.steps_received),
        )


_POISON = object()


class Session:
    """One multiplexed conversation on a connection."""

    def __init__(self, conn: "Connection", session_id: str):
        self.conn = conn
        self.id = session_id

    def send(self, step: str, payload: dict) -> None:
        self.conn.send(self.id, step, payload)

    def recv(self, timeout: Optional[float] = None) -> Tuple[str, dict]:
        return self.conn.recv(self.id, timeout)

    def expect(self, step: str, timeout: Optional[float] = None) -> dict:
        got_step, payload = self.recv(timeout)
        if got_step != step:
            raise ProtocolError(
                "session %s: expected step %r, received %r"
                % (self.id, step, got_step)
            )
        return payload

    def close(self) -> None:
        self.conn.release_session(self.id)


class Connection:
    """A framed duplex link with per-session routing.

    ``name`` only labels log and error messages.
    """

    def __init__(self, stream, name: str = "conn"):
        self._stream = stream
        self.name = name
        self._send_lock = threading.Lock()
        self._state_lock = threading.Lock()
        self._queues: Dict[str, "queue.SimpleQueue"] = {}
        self._announced: "queue.SimpleQueue" = queue.SimpleQueue()
        self._announced_ids = set()
        self._error: Optional[BaseException] = None
        self._closed = False
        self._stats = TransportStats()
        self._taps: List[Callable[[str, dict, bytes], None]] = []
        self._rx_offset = 0
        self._receiver = threading.Thread(
            target=self._receive_loop, name="%s-rx" % name, daemon=True
        )
        self._receiver.start()

    # -- sending -------------------------------------------------------

    def send(self, session: str, step: str, payload: dict) -> None:
        body = encode_envelope(session, step, payload)
        if len(body) > FRAME_CAP:
            raise OversizeFrameError(
                "frame of %d bytes exceeds the %d-byte cap" % (len(body), FRAME_CAP)
            )
        frame = _HEADER.pack(len(body)) + body
        with self._send_lock:
            if self._closed:
                raise ConnectionClosedError("%s: connection is closed" % self.name)
            for tap in self._taps:
                tap("send", {"session": session, "step": step, "payload": payload}, body)
            self._stream.sendall(frame)
            self._stats.frames_sent += 1
            self._stats.bytes_sent += len(frame)
            self._stats.steps_sent[step] = self._stats.steps_sent.get(step, 0) + 1

    # -- receiving -----------------------------------------------------

    def _read_exact(self, count: int) -> bytes:
        chunks = []
        remaining = count
        while remaining:
            chunk = self._stream.recv(min(remaining, 65536))
            if not chunk:
                if chunks or count != remaining:
                    raise ConnectionClosedError(
                        "%s: connection closed mid-frame" % self.name
                    )
                raise ConnectionClosedError("%s: connection closed" % self.name)
            chunks.append(chunk)
            remaining -= len(chunk)
        return b"".join(chunks)

    def _receive_loop(self) -> None:
        try:
            while True:
                frame_start = self._rx_offset
                header = self._read_exact(_HEADER.size)
                (length,) = _HEADER.unpack(header)
                if length == 0:
                    raise MalformedFrameError("zero-length frame", frame_start)
                if length > FRAME_CAP:
                    raise OversizeFrameError(
                        "frame of %d bytes exceeds the %d-byte cap (offset %d)"
                        % (length, FRAME_CAP, frame_start)
                    )
                body = self._read_exact(length)
                self._rx_offset += _HEADER.size + length
                session, step, payload = decode_envelope(body, frame_start)
                with self._state_lock:
                    self._stats.frames_received += 1
                    self._stats.bytes_received += _HEADER.size + length
                    self._stats.steps_received[step] = (
                        self._stats.steps_received.get(step, 0) + 1
                    )
                    for tap in self._taps:
                        tap(
                            "recv",
                            {"session": session, "step": step, "payload": payload},
                            body,
                        )
                    if session not in self._queues:
                        self._queues[session] = queue.SimpleQueue()
                        if session not in CONTROL_SESSIONS:
                            self._announced_ids.add(session)
                            self._announced.put(session)
                    self._queues[session].put((step, payload))
        except BaseException as exc:  # noqa: BLE001 - poison the connection
            self._poison(exc)

    def _poison(self, exc: BaseException) -> None:
        with self._state_lock:
            if self._error is None:
                self._error = exc
            for q in self._queues.values():
                q.put(_POISON)
            self._announced.put(_POISON)

    def recv(
        self, session: str, timeout: Optional[float] = None
    ) -> Tuple[str, dict]:
        q = self._queue_for(session)
        try:
            item = q.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeoutError(
                "%s: no message on session %s within %.3fs"
                % (self.name, session, timeout or 0.0)
            ) from None
        if item is _POISON:
            q.put(_POISON)  # let other waiters see it too
            raise self._raise_error()
        return item

    def _queue_for(self, session: str) -> "queue.SimpleQueue":
        with self._state_lock:
            q = self._queues.get(session)
            if q is None:
                q = queue.SimpleQueue()
                self._queues[session] = q
                if self._error is not None:
                    q.put(_POISON)
            return q

    def _raise_error(self) -> BaseException:
        err = self._error
        if err is None:
            err = ConnectionClosedError("%s: connection is closed" % self.name)
        if isinstance(err, Exception):
            raise err
        raise ConnectionClosedError("%s: receiver failed: %r" % (self.name, err))

    # -- sessions ------------------------------------------------------

    def open_session(self, prefix: str) -> Session:
        """Start a locally initiated session."""
        sid = new_session_id(prefix)
        self._queue_for(sid)
        return Session(self, sid)

    def session(self, session_id: str) -> Session:
        """Handle for an explicitly named session."""
        self._queue_for(session_id)
        return Session(self, session_id)

    def accept_session(self, timeout: Optional[float] = None) -> Session:
        """Wait for a session first seen on the wire.

        The session's opening message is already queued; read it with
        :meth:`Session.recv`.
        """
        try:
            item = self._announced.get(timeout=timeout)
        except queue.Empty:
            raise TransportTimeoutError(
                "%s: no incoming session within %.3fs" % (self.name, timeout or 0.0)
            ) from None
        if item is _POISON:
            self._announced.put(_POISON)
            raise self._raise_error()
        return Session(self, item)

    def release_session(self, session_id: str) -> None:
        with self._state_lock:
            self._queues.pop(session_id, None)
            self._announced_ids.discard(session_id)

    # -- bookkeeping ---------------------------------------------------

    def add_tap(self, tap: Callable[[str, dict, bytes], None]) -> None:
        """Register an observer called with every frame in both
        directions (direction, envelope dict, canonical body bytes)."""
        with self._state_lock:
            self._taps.append(tap)

    def stats(self) -> TransportStats:
        with self._state_lock:
            return self._stats.copy()

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        with self._send_lock:
            if self._closed:
                return
            self._closed = True
        self._stream.close()
        self._poison(ConnectionClosedError("%s: connection is closed" % self.name))

    def __enter__(self) -> "Connection":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def loopback_pair(name: str = "loop") -> Tuple[Connection, Connection]:
    """Two connections joined by in-memory streams.  Frames still travel
    through the full encode/decode path."""
    a, b = MemoryStream.pair()
    return Connection(a, "%s-a" % name), Connection(b, "%s-b" % name)


def connect_tcp(host: str, port: int, timeout: float = 10.0) -> Connection:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as exc:
        raise TransportError("cannot connect to %s:%d: %s" % (host, port, exc)) from exc
    sock.settimeout(None)
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return Connection(_SocketStream(sock), "tcp[%s:%d]" % (host, port))


class Listener:
    """A TCP accept loop producing :class:`Connection` objects."""

    def __init__(self, host: str, port: int, backlog: int = 16):
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            self._sock.bind((host, port))
        except OSError as exc:
            self._sock.close()
            raise TransportError(
                "cannot listen on %s:%d: %s" % (host, port, exc)
            ) from exc
        self._sock.listen(backlog)
        self.host, self.port = self._sock.getsockname()[:2]
        self._closed = False

    def accept(self, timeout: Optional[float] = None) -> Connection:
        self._sock.settimeout(timeout)
        try:
            sock, addr = self._sock.accept()
        except socket.timeout:
            raise TransportTimeoutError(
                "no inbound connection within %.3fs" % (timeout or 0.0)
            ) from None
        except OSError as exc:
            raise ConnectionClosedError("listener closed: %s" % exc) from exc
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        return Connection(_SocketStream(sock), "tcp[%s:%d]" % addr[:2])

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self._sock.close()

    def __enter__(self) -> "Listener":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def client_hello(conn: Connection, role: str, timeout: float = 10.0) -> str:
    """Dialer side of the handshake; returns the peer's announced role."""
    sess = conn.session("hello")
    sess.send("hello", {"role": role})
    reply = sess.expect("hello", timeout)
    peer = reply.get("role")
    if not isinstance(peer, str) or not peer:
        raise ProtocolError("peer hello carried no role")
    return peer


def server_hello(conn: Connection, role: str, timeout: float = 10.0) -> str:
    """Acceptor side of the handshake; returns the peer's announced role."""
    sess = conn.session("hello")
    payload = sess.expect("hello", timeout)
    peer = payload.get("role")
    if not isinstance(peer, str) or not peer:
        raise ProtocolError("peer hello carried no role")
    sess.send("hello", {"role": role})
    return peer
