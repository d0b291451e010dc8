"""Command-line entry points.

Subcommands:

* ``org-keygen``  -- generate the threshold key set (pk, sk, shares).
* ``org-enroll``  -- quantize and encrypt a feature database into the
  two server shards plus the identity list and encrypted threshold.
* ``server``      -- run one recognition server from a config file.
* ``recognize``   -- probe the two servers with feature vectors.
* ``bench``       -- timing/traffic measurements (see ``pura.bench``).

Exit codes: 0 on success (``recognize``: every probe accepted), 1 when
``recognize`` rejects at least one probe, 2 on any error.
"""

import argparse
import json
import logging
import os
import sys
import tempfile

from .daemon import ServerDaemon, load_config
from .encoding import read_feature_csv, threshold_raw
from .engine import encrypt_database, encrypt_threshold, recognize
from .errors import DomainError, KeyFormatError, PuraError
from .paillier import key_file_payloads, keygen, public_key_from_doc
from .params import PROFILES, ParamSet
from .transport import client_hello, connect_tcp

log = logging.getLogger("pura.cli")


def _setup_logging() -> None:
    level = os.environ.get("PURA_LOG", "INFO").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )


def _write_json(path: str, doc: dict, force: bool = False, secret: bool = False) -> None:
    if os.path.exists(path) and not force:
        raise DomainError("refusing to overwrite %s (use --force)" % path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.chmod(tmp, 0o600 if secret else 0o644)
        os.replace(tmp, path)
    except BaseException:
        try:
            os.unlink(tmp)
        except OSError:
            pass
        raise


def _read_json(path: str) -> dict:
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


def _params_from_args(args) -> ParamSet:
    params = PROFILES[args.profile]
    overrides = {
        name: getattr(args, name)
        for name in ("kappa", "modulus_bits", "sigma", "ell")
        if getattr(args, name) is not None
    }
    if overrides:
        params = ParamSet(
            kappa=overrides.get("kappa", params.kappa),
            modulus_bits=overrides.get("modulus_bits", params.modulus_bits),
            sigma=overrides.get("sigma", params.sigma),
            ell=overrides.get("ell", params.ell),
        )
    return params


def _epsilon_raw(args) -> int:
    if args.epsilon_raw is not None:
        return args.epsilon_raw
    return threshold_raw(args.epsilon)


def _hostport(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not host:
        raise DomainError("expected HOST:PORT, got %r" % text)
    try:
        return host, int(port)
    except ValueError:
        raise DomainError("bad port in %r" % text) from None


# -- subcommands -------------------------------------------------------------


def cmd_keygen(args) -> int:
    params = _params_from_args(args)
    log.info(
        "generating keys: kappa=%d modulus_bits=%d sigma=%d ell=%d",
        params.kappa, params.modulus_bits, params.sigma, params.ell,
    )
    material = keygen(params)
    docs = key_file_payloads(material)
    names = {"pk": False, "sk": True, "share1": True, "share2": True}
    for name, secret in names.items():
        path = os.path.join(args.out, "%s.json" % name)
        _write_json(path, docs[name], force=args.force, secret=secret)
        print("wrote %s" % path)
    return 0


def cmd_enroll(args) -> int:
    pk = public_key_from_doc(_read_json(args.pk))
    rows = read_feature_csv(args.db)
    epsilon_raw = _epsilon_raw(args)
    docs = encrypt_database(pk, rows, split_at=args.split_at)
    eps_doc = encrypt_threshold(pk, epsilon_raw)
    outputs = [
        ("s1_shard.json", docs["s1"]),
        ("s2_shard.json", docs["s2"]),
        ("ids.json", docs["ids"]),
        ("epsilon.json", eps_doc),
    ]
    for name, doc in outputs:
        path = os.path.join(args.out, name)
        _write_json(path, doc, force=args.force)
        print("wrote %s" % path)
    print(
        "enrolled %d identities, dim %d, split %d/%d, threshold %d"
        % (
            len(rows),
            len(rows[0][1]),
            len(docs["s2"]["rows"]),
            len(docs["s1"]["rows"]),
            epsilon_raw,
        )
    )
    return 0


def cmd_server(args) -> int:
    config = load_config(args.config)
    daemon = ServerDaemon(config)
    host, port = daemon.start()
    print("pura-server role=%s listening on %s:%d" % (config.role, host, port),
          flush=True)
    daemon.run_forever()
    return 0


def cmd_recognize(args) -> int:
    pk = public_key_from_doc(_read_json(args.pk))
    epsilon_raw = _epsilon_raw(args)
    if args.probe is not None:
        probes = read_feature_csv(args.probe)
    else:
        values = [float(part) for part in args.features.split(",") if part.strip()]
        probes = [("probe", values)]

    s1_host, s1_port = _hostport(args.s1)
    s2_host, s2_port = _hostport(args.s2)
    results = []
    with connect_tcp(s1_host, s1_port) as s1_conn, \
            connect_tcp(s2_host, s2_port) as s2_conn:
        client_hello(s1_conn, "client")
        client_hello(s2_conn, "client")
        for ident, features in probes:
            gamma, accepted = recognize(
                pk, s1_conn, s2_conn, features, epsilon_raw, timeout=args.timeout
            )
            results.append({"id": ident, "gamma": gamma, "accepted": accepted})
    if args.json:
        print(json.dumps(results, indent=2))
    else:
        for row in results:
            print(
                "%s\tgamma=%d\t%s"
                % (row["id"], row["gamma"], "accepted" if row["accepted"] else "rejected")
            )
    return 0 if all(row["accepted"] for row in results) else 1


def cmd_bench(args) -> int:
    from . import bench

    params = PROFILES[args.profile]
    sizes = [int(part) for part in args.sizes.split(",") if part.strip()]
    material = None
    if args.suite != "kernels":
        log.info("generating %s key material for the bench", args.profile)
        material = keygen(params)
    rows = bench.run_suite(
        args.suite, material, params, sizes, repeat=args.repeat, dim=args.dim
    )
    print(bench.format_table(rows))
    if args.out:
        bench.write_csv(rows, args.out)
        print("wrote %s" % args.out)
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pura",
        description="Privacy-preserving face recognition over twin servers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("org-keygen", help="generate the threshold key set")
    p.add_argument("--profile", choices=sorted(PROFILES), default="default")
    p.add_argument("--kappa", type=int)
    p.add_argument("--modulus-bits", type=int, dest="modulus_bits")
    p.add_argument("--sigma", type=int)
    p.add_argument("--ell", type=int)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true", help="overwrite existing files")
    p.set_defaults(func=cmd_keygen)

    p = sub.add_parser("org-enroll", help="encrypt a feature database")
    p.add_argument("--pk", required=True, help="public key file")
    p.add_argument("--db", required=True, help="feature CSV (id,components...)")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--epsilon", type=float, help="distance threshold (feature units)")
    group.add_argument("--epsilon-raw", type=int, dest="epsilon_raw",
                       help="threshold in quantized squared-distance units")
    p.add_argument("--split-at", type=int, dest="split_at",
                   help="rows before this index go to server 2")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_enroll)

    p = sub.add_parser("server", help="run one recognition server")
    p.add_argument("--config", required=True, help="server config JSON")
    p.set_defaults(func=cmd_server)

    p = sub.add_parser("recognize", help="probe the two servers")
    p.add_argument("--pk", required=True)
    p.add_argument("--s1", required=True, metavar="HOST:PORT")
    p.add_argument("--s2", required=True, metavar="HOST:PORT")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--probe", help="feature CSV of probes")
    source.add_argument("--features", help="comma-separated components")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--epsilon", type=float)
    group.add_argument("--epsilon-raw", type=int, dest="epsilon_raw")
    p.add_argument("--timeout", type=float, default=300.0)
    p.add_argument("--json", action="store_true", help="JSON output")
    p.set_defaults(func=cmd_recognize)

    p = sub.add_parser("bench", help="run timing and traffic measurements")
    p.add_argument("--suite", choices=("kernels", "protocols", "pipeline"),
                   required=True)
    p.add_argument("--profile", choices=sorted(PROFILES), default="toy-e2e")
    p.add_argument("--sizes", default="1,8,64", help="comma-separated sizes")
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--dim", type=int, default=16, help="pipeline feature dimension")
    p.add_argument("--out", help="write rows to this CSV")
    p.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except PuraError as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
