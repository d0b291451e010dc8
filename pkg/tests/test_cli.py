"""End-to-end tests of the command-line interface over real TCP."""

import json
import os
import re
import signal
import subprocess
import sys
import threading
import time

import pytest

from pura import cli
from pura.encoding import write_feature_csv

READY = re.compile(r"listening on (\S+):(\d+)")


class DaemonHandle:
    def __init__(self, proc):
        self.proc = proc
        self.lines = []
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self.proc.stdout:
            self.lines.append(line)

    def wait_ready(self, deadline=30.0):
        start = time.monotonic()
        while time.monotonic() - start < deadline:
            for line in list(self.lines):
                found = READY.search(line)
                if found:
                    return found.group(1), int(found.group(2))
            if self.proc.poll() is not None:
                raise RuntimeError("server exited early:\n%s" % "".join(self.lines))
            time.sleep(0.05)
        raise RuntimeError("server never became ready:\n%s" % "".join(self.lines))

    def stop(self, sig=signal.SIGTERM, deadline=10.0):
        if self.proc.poll() is None:
            self.proc.send_signal(sig)
        try:
            self.proc.wait(timeout=deadline)
        except subprocess.TimeoutExpired:
            self.proc.kill()
            self.proc.wait(timeout=deadline)
        self._reader.join(timeout=5)
        return self.proc.returncode


def spawn_server(config_path):
    proc = subprocess.Popen(
        [sys.executable, "-m", "pura.cli", "server", "--config", str(config_path)],
        stdout=subprocess.PIPE,
        stderr=subprocess.STDOUT,
        text=True,
    )
    return DaemonHandle(proc)


def write_config(path, role, port, *, peer=None, base=None):
    doc = {
        "version": 1,
        "role": role,
        "listen": {"host": "127.0.0.1", "port": port},
        "public_key": "keys/pk.json",
        "share": "keys/share%s.json" % role[1],
        "shard": "db/%s_shard.json" % role,
        "workers": 2,
    }
    if role == "s1":
        doc["epsilon"] = "db/epsilon.json"
    if peer is not None:
        doc["peer"] = {"host": peer[0], "port": peer[1]}
    path.write_text(json.dumps(doc, indent=2))
    return path


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Keys, database, and CSVs laid out the way the CLI expects."""
    import random

    from conftest import DATA_SEED

    rng = random.Random(DATA_SEED)
    root = tmp_path_factory.mktemp("cli")
    rows = [
        ("person-%02d" % i, [rng.random() for _ in range(8)])
        for i in range(6)
    ]
    write_feature_csv(str(root / "db.csv"), rows)
    write_feature_csv(
        str(root / "probes.csv"),
        [("hit", list(rows[2][1])), ("miss", [1.0 - v for v in rows[0][1]])],
    )
    write_feature_csv(str(root / "hit.csv"), [("hit", list(rows[4][1]))])
    assert cli.main(
        ["org-keygen", "--profile", "toy-e2e", "--out", str(root / "keys")]
    ) == 0
    assert cli.main(
        [
            "org-enroll",
            "--pk", str(root / "keys" / "pk.json"),
            "--db", str(root / "db.csv"),
            "--epsilon", "0.35",
            "--out", str(root / "db"),
        ]
    ) == 0
    return root


@pytest.fixture()
def daemon_pair(workspace):
    """Start a fresh s2+s1 pair on ephemeral ports; yields the factory
    result (s1 address, s2 address) and tears both down."""
    handles = []

    def start():
        s2 = spawn_server(
            write_config(workspace / "s2.json", "s2", 0)
        )
        handles.append(s2)
        s2_addr = s2.wait_ready()
        s1 = spawn_server(
            write_config(workspace / "s1.json", "s1", 0, peer=s2_addr)
        )
        handles.append(s1)
        s1_addr = s1.wait_ready()
        return s1_addr, s2_addr, s1, s2

    yield start
    for handle in handles:
        handle.stop()


def hostport(addr):
    return "%s:%d" % addr


def test_keygen_refuses_overwrite(workspace):
    code = cli.main(
        ["org-keygen", "--profile", "toy", "--out", str(workspace / "keys")]
    )
    assert code == 2
    # The original key set survives untouched and still parses.
    from pura.paillier import public_key_from_doc

    doc = json.loads((workspace / "keys" / "pk.json").read_text())
    assert public_key_from_doc(doc).params.modulus_bits == 256


def test_secret_files_are_owner_only(workspace):
    for name, secret in [
        ("pk.json", False), ("sk.json", True),
        ("share1.json", True), ("share2.json", True),
    ]:
        mode = os.stat(workspace / "keys" / name).st_mode & 0o777
        assert mode == (0o600 if secret else 0o644), name


def test_enroll_requires_threshold_flag(workspace, capsys):
    with pytest.raises(SystemExit):
        cli.main(
            [
                "org-enroll",
                "--pk", str(workspace / "keys" / "pk.json"),
                "--db", str(workspace / "db.csv"),
                "--out", str(workspace / "unused"),
            ]
        )
    assert "--epsilon" in capsys.readouterr().err


def test_recognize_over_tcp(workspace, daemon_pair, capsys):
    s1_addr, s2_addr, _, _ = daemon_pair()
    code = cli.main(
        [
            "recognize",
            "--pk", str(workspace / "keys" / "pk.json"),
            "--s1", hostport(s1_addr),
            "--s2", hostport(s2_addr),
            "--probe", str(workspace / "probes.csv"),
            "--epsilon", "0.35",
            "--json",
        ]
    )
    results = json.loads(capsys.readouterr().out)
    assert [r["id"] for r in results] == ["hit", "miss"]
    assert results[0]["accepted"] is True and results[0]["gamma"] == 0
    assert results[1]["accepted"] is False
    assert code == 1  # one probe rejected

    code = cli.main(
        [
            "recognize",
            "--pk", str(workspace / "keys" / "pk.json"),
            "--s1", hostport(s1_addr),
            "--s2", hostport(s2_addr),
            "--probe", str(workspace / "hit.csv"),
            "--epsilon", "0.35",
        ]
    )
    out = capsys.readouterr().out
    assert code == 0
    assert "gamma=0" in out and "accepted" in out


def test_recognize_exit_2_when_server_down(workspace, daemon_pair, capsys):
    s1_addr, s2_addr, _, s2 = daemon_pair()
    assert s2.stop() == 0
    code = cli.main(
        [
            "recognize",
            "--pk", str(workspace / "keys" / "pk.json"),
            "--s1", hostport(s1_addr),
            "--s2", hostport(s2_addr),
            "--probe", str(workspace / "hit.csv"),
            "--epsilon", "0.35",
            "--timeout", "10",
        ]
    )
    assert code == 2
    assert "error:" in capsys.readouterr().err


def test_daemons_shut_down_cleanly(workspace, daemon_pair):
    _, _, s1, s2 = daemon_pair()
    assert s1.stop() == 0
    assert s2.stop() == 0


def test_server_rejects_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "role": "s3"}))
    assert cli.main(["server", "--config", str(bad)]) == 2
    assert "role" in capsys.readouterr().err
