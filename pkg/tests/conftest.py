"""Shared fixtures: session-scoped keys per parameter profile and a
two-party harness that pairs an initiator context with a live responder.

Key generation is randomized; everything the tests assert holds for any
well-formed key, so fixtures are generated fresh per session rather than
pinned.
"""

import contextlib
import random
import threading

import pytest

from pura import params as param_mod
from pura.paillier import keygen
from pura.sessions import ProtocolContext, serve_connection
from pura.transport import loopback_pair

# Deterministic synthetic data; key material itself uses the default CSPRNG.
DATA_SEED = 20260814


@pytest.fixture(scope="session")
def toy_keys():
    return keygen(param_mod.TOY)


@pytest.fixture(scope="session")
def e2e_keys():
    return keygen(param_mod.TOY_E2E)


@pytest.fixture(scope="session")
def full_keys():
    return keygen(param_mod.DEFAULT)


@pytest.fixture()
def data_rng():
    return random.Random(DATA_SEED)


@contextlib.contextmanager
def protocol_pair(keys, seed=DATA_SEED, handlers=None):
    """Initiator context + loopback connection, with the peer context
    responding on a background thread until the block exits.

    Yields ``(initiator_ctx, initiator_conn, responder_conn)``; tests
    import this directly rather than through a fixture so they can nest
    and parameterize it freely.
    """
    left, right = loopback_pair()
    initiator = ProtocolContext(
        keys.public, keys.share1, rng=random.Random(seed)
    )
    responder = ProtocolContext(
        keys.public, keys.share2, rng=random.Random(seed + 1)
    )
    stop = threading.Event()
    thread = threading.Thread(
        target=serve_connection,
        args=(responder, right, handlers, stop),
        daemon=True,
    )
    thread.start()
    try:
        yield initiator, left, right
    finally:
        stop.set()
        left.close()
        right.close()
        thread.join(timeout=5)


_ACCEPTANCE_RESULTS: dict[int, tuple[str, str]] = {}


def record_criterion(number: int, status: str, detail: str):
    _ACCEPTANCE_RESULTS[number] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE_RESULTS):
        status, detail = _ACCEPTANCE_RESULTS[number]
        terminalreporter.write_line(f"criterion {number}: {status} — {detail}")
