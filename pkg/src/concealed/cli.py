"""Command line: store server, mix node, a demo client and the leakage harness.

Exit codes: 0 success, 1 usage or local error, 2 protocol or server error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import random
import signal
import sys
import threading
from pathlib import Path

from . import group, wire
from .client import (AccessDenied, ClientEngine, Keyring, KeyringError, MixInfo, ServerError,
                     bundle_to_qr, contact_bundle, load_directory, parse_bundle, save_directory)
from .mix import MixConfig, MixNode
from .osn import OsnClient, OsnError, ProfileEntry
from .server import (ProtocolError, ServerConfig, StoreServer, TcpConnection, build_store, load_config,
                     parse_endpoint, save_snapshot)

DATA_ENV = "CONCEALED_DATA_DIR"
PASSPHRASE_ENV = "CONCEALED_PASSPHRASE"
KEYRING_FILE = "keyring.bin"
CLIENT_FILE = "client.json"

log = logging.getLogger("concealed")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _data_dir(args) -> Path:
    path = args.data_dir or os.environ.get(DATA_ENV) or Path.home() / ".concealed"
    return Path(path)


def _rng(args):
    return random.Random(args.seed) if args.seed is not None else group.SYSTEM_RNG


def _wait_for_signal() -> threading.Event:
    stop = threading.Event()
    for sig in (signal.SIGINT, signal.SIGTERM):
        signal.signal(sig, lambda *_: stop.set())
    return stop


def _server_key(args) -> bytes:
    if getattr(args, "server_key", None):
        return bytes.fromhex(args.server_key)
    if getattr(args, "server_key_file", None):
        return bytes.fromhex(Path(args.server_key_file).read_text().strip())
    raise UsageError("give --server-key or --server-key-file")


# -- server and mix -----------------------------------------------------------------

def cmd_server_run(args) -> int:
    cfg = load_config(args.config) if args.config else ServerConfig()
    if args.listen:
        cfg.listen = args.listen
    if args.group:
        cfg.group = args.group
    if args.snapshot:
        cfg.snapshot_path = args.snapshot
    cfg.server_key_path = args.key_file or cfg.server_key_path or str(_data_dir(args) / "server.key")
    store = build_store(cfg, rng=_rng(args) if args.seed is not None else None)
    server = StoreServer(store, parse_endpoint(cfg.listen))
    stop = _wait_for_signal()
    server.start_background()
    print(f"listening on {server.endpoint} key {store.public_key.hex()}", flush=True)
    while not stop.wait(1.0):
        store.sweep()
    server.shutdown()
    server.server_close()
    if cfg.snapshot_path:
        save_snapshot(store, cfg.snapshot_path)
    return 0


def cmd_mix_run(args) -> int:
    params = group.group_by_name(args.group)
    rng = _rng(args)
    engine = ClientEngine(TcpConnection(args.server), params, _server_key(args), rng)
    config = MixConfig(batch_size=args.batch, flush_timeout=args.timeout, poll_interval=args.poll)
    node = MixNode(args.name, engine, config, rng=rng, operator=args.operator)
    node.register_inboxes(args.inboxes)
    directory = Path(args.directory)
    mixes = [m for m in (load_directory(directory) if directory.exists() else []) if m.name != args.name]
    save_directory(mixes + [node.directory_entry()], directory)
    print(f"mix {args.name} inboxes {' '.join(node.directory_entry().inboxes)}", flush=True)
    stop = _wait_for_signal()
    node.run(stop)
    return 0


# -- client -------------------------------------------------------------------------

class ClientSession:
    """Loads the keyring and connection for one command and saves the keyring afterwards."""

    def __init__(self, args):
        self.dir = _data_dir(args)
        self.passphrase = args.passphrase if args.passphrase is not None else os.environ.get(PASSPHRASE_ENV)
        if self.passphrase is None:
            raise UsageError(f"give --passphrase or set {PASSPHRASE_ENV}")
        self.rng = _rng(args)
        cfg_path = self.dir / CLIENT_FILE
        if not cfg_path.exists():
            raise UsageError(f"no client in {self.dir}; run 'client init' first")
        self.cfg = json.loads(cfg_path.read_text())
        self.params = group.group_by_name(self.cfg["group"])
        self.ring = Keyring.load(self.dir / KEYRING_FILE, self.passphrase)
        self.conn = TcpConnection(self.cfg["server"])
        self.engine = ClientEngine(self.conn, self.params, bytes.fromhex(self.cfg["server_key"]), self.rng)
        mixes_path = self.cfg.get("mixes")
        mixes = load_directory(mixes_path) if mixes_path and Path(mixes_path).exists() else []
        self.osn = OsnClient(self.ring, self.engine, mixes, hops=args_hops(args, mixes))

    def save(self) -> None:
        self.ring.save(self.dir / KEYRING_FILE, self.passphrase, self.rng)

    def close(self) -> None:
        self.conn.close()


def args_hops(args, mixes: list[MixInfo]) -> int | None:
    hops = getattr(args, "hops", None)
    if hops is not None and hops > len(mixes):
        raise UsageError(f"{hops} hops requested but only {len(mixes)} mixes known")
    return hops


def cmd_client_init(args) -> int:
    d = _data_dir(args)
    passphrase = args.passphrase if args.passphrase is not None else os.environ.get(PASSPHRASE_ENV)
    if passphrase is None:
        raise UsageError(f"give --passphrase or set {PASSPHRASE_ENV}")
    if (d / KEYRING_FILE).exists() and not args.force:
        raise UsageError(f"{d / KEYRING_FILE} exists; pass --force to replace it")
    rng = _rng(args)
    params = group.group_by_name(args.group)
    server_key = _server_key(args)
    ring = Keyring.generate(args.name, rng)
    with TcpConnection(args.server) as conn:
        engine = ClientEngine(conn, params, server_key, rng)
        ring.inbox = engine.create_concealed_address(read=True, write=False, own=True)
    d.mkdir(parents=True, exist_ok=True)
    cfg = {"server": args.server, "server_key": server_key.hex(), "group": args.group,
           "mixes": str(Path(args.mixes).resolve()) if args.mixes else None}
    (d / CLIENT_FILE).write_text(json.dumps(cfg, indent=1, sort_keys=True) + "\n")
    ring.save(d / KEYRING_FILE, passphrase, rng)
    bundle = contact_bundle(ring)
    (d / "bundle.txt").write_text(bundle_to_qr(bundle) + "\n")
    print(bundle_to_qr(bundle))
    return 0


def _with_session(fn):
    def run(args) -> int:
        session = ClientSession(args)
        try:
            code = fn(session, args)
            session.save()
            return code
        finally:
            session.close()
    return run


@_with_session
def cmd_contact_add(s: ClientSession, args) -> int:
    text = Path(args.bundle[1:]).read_text().strip() if args.bundle.startswith("@") else args.bundle
    contact = s.ring.add_contact(parse_bundle(text))
    if args.verified:
        contact.verified = True
    words = group.fingerprint([(s.ring.key_id, s.ring.public_key), (contact.key_id, contact.public_key)])
    print(f"added {contact.name} verified={contact.verified} fingerprint: {words}")
    return 0


def _entry(text: str, key_group: str | None) -> ProfileEntry:
    label, sep, value = text.partition("=")
    if not sep or not label:
        raise UsageError(f"profile fields look like Label=Value, got {text!r}")
    return ProfileEntry(label, value, key_group)


@_with_session
def cmd_profile_publish(s: ClientSession, args) -> int:
    entries = [_entry(f, None) for f in args.field]
    entries += [_entry(f, args.key_group) for f in args.private]
    root = s.osn.publish_profile(entries)
    for name in args.grant:
        receipt = s.osn.grant_profile_access(name, [args.key_group])
        if receipt.warning:
            print(receipt.warning, file=sys.stderr)
    print(root)
    return 0


@_with_session
def cmd_chat_create(s: ClientSession, args) -> int:
    for name in args.members:
        if name not in s.ring.contacts:
            raise UsageError(f"unknown contact {name!r}")
    chat = s.osn.create_chat(args.members, open_write=args.open_write, allow_unverified=args.allow_unverified)
    print(chat.c)
    return 0


@_with_session
def cmd_chat_send(s: ClientSession, args) -> int:
    s.osn.poll_inbox()
    if args.chat not in s.ring.extra["chats"]:
        raise UsageError(f"unknown chat {args.chat}")
    s.osn.send_chat(s.osn.chat(args.chat), args.text, via_mixes=args.via_mixes)
    return 0


@_with_session
def cmd_chat_read(s: ClientSession, args) -> int:
    s.osn.poll_inbox()
    if args.chat not in s.ring.extra["chats"]:
        raise UsageError(f"unknown chat {args.chat} (no invite received yet?)")
    messages, _ = s.osn.read_chat(s.osn.chat(args.chat))
    for m in messages:
        print(m.get("text", ""))
    return 0


@_with_session
def cmd_address_create(s: ClientSession, args) -> int:
    secrets = s.engine.create_concealed_address(read=not args.public_read, write=not args.public_write)
    s.ring.addresses[args.label or secrets.c] = secrets
    print(secrets.c)
    return 0


# -- harness ------------------------------------------------------------------------

def _write(path: str | None, text: str) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def cmd_harness_scenario(args) -> int:
    from .harness import generate
    script = generate(args.seed, n_users=args.users, n_mixes=args.mixes, rounds=args.rounds)
    _write(args.out, script.to_json())
    return 0


def cmd_harness_run(args) -> int:
    from .harness import ScenarioScript, evaluate, generate, run_scenario
    if args.scenario:
        script = ScenarioScript.from_json(Path(args.scenario).read_text())
    else:
        script = generate(args.seed, n_users=args.users, n_mixes=args.mixes, rounds=args.rounds)
    kwargs = {"hops": args.hops} if args.store == "concealed" and args.hops is not None else {}
    run = run_scenario(script, args.store, **kwargs)
    if args.trace:
        Path(args.trace).write_text(run.trace.to_text())
    report = evaluate(run, script.seed)
    _write(args.out, json.dumps(report.to_json(), sort_keys=True, indent=1) + "\n")
    return 0


def _seed_list(text: str) -> list[int]:
    lo, sep, hi = text.partition("-")
    if sep:
        return list(range(int(lo), int(hi) + 1))
    return [int(x) for x in text.split(",")]


def cmd_harness_compare(args) -> int:
    from .harness import AttackReport, compare, run_many
    if args.reports:
        reports = [AttackReport.from_json(json.loads(Path(p).read_text())) for p in args.reports]
        result = compare(reports)
    else:
        result, elapsed = run_many(_seed_list(args.seeds), n_users=args.users, n_mixes=args.mixes)
        log.info("harness compare took %.1f s", elapsed)
    if args.json:
        Path(args.json).write_text(result.to_json())
    _write(args.out, result.to_text())
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--data-dir", help=f"state directory (default ${DATA_ENV} or ~/.concealed)")
    common.add_argument("--seed", type=int, help="seed all randomness (reproducible demos only)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="concealed", description=__doc__.splitlines()[0])
    top = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    server = top.add_parser("server").add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = server.add_parser("run", parents=[common], help="run the address store")
    run.add_argument("--listen")
    run.add_argument("--config")
    run.add_argument("--group", choices=sorted(group.GROUPS))
    run.add_argument("--snapshot", help="restore from and save to this file")
    run.add_argument("--key-file", help="X25519 server key (created with a .pub beside it)")
    run.set_defaults(func=cmd_server_run)

    mix = top.add_parser("mix").add_subparsers(dest="action", required=True, parser_class=_Parser)
    run = mix.add_parser("run", parents=[common], help="run a mix node against a store")
    run.add_argument("--server", required=True)
    run.add_argument("--server-key")
    run.add_argument("--server-key-file")
    run.add_argument("--group", default="schnorr2048-256", choices=sorted(group.GROUPS))
    run.add_argument("--name", required=True)
    run.add_argument("--operator")
    run.add_argument("--inboxes", type=int, default=2)
    run.add_argument("--batch", type=int, default=5)
    run.add_argument("--timeout", type=float, default=2.0)
    run.add_argument("--poll", type=float, default=0.5)
    run.add_argument("--directory", required=True, help="mix directory file to add this mix to")
    run.set_defaults(func=cmd_mix_run)

    client = top.add_parser("client").add_subparsers(dest="action", required=True, parser_class=_Parser)
    secret = _Parser(add_help=False)
    secret.add_argument("--passphrase", help=f"keyring passphrase (default ${PASSPHRASE_ENV})")

    init = client.add_parser("init", parents=[common, secret], help="new identity and inbox")
    init.add_argument("--name", required=True)
    init.add_argument("--server", required=True)
    init.add_argument("--server-key")
    init.add_argument("--server-key-file")
    init.add_argument("--group", default="schnorr2048-256", choices=sorted(group.GROUPS))
    init.add_argument("--mixes", help="mix directory file")
    init.add_argument("--force", action="store_true")
    init.set_defaults(func=cmd_client_init)

    contact = client.add_parser("contact").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    add = contact.add_parser("add", parents=[common, secret])
    add.add_argument("bundle", help="contact bundle text, or @file")
    add.add_argument("--verified", action="store_true",
                     help="fingerprints were compared out of band")
    add.set_defaults(func=cmd_contact_add)

    profile = client.add_parser("profile").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    pub = profile.add_parser("publish", parents=[common, secret])
    pub.add_argument("--field", action="append", default=[], help="public Label=Value")
    pub.add_argument("--private", action="append", default=[], help="sealed Label=Value")
    pub.add_argument("--key-group", default="friends")
    pub.add_argument("--grant", action="append", default=[], help="contact to grant the key group")
    pub.add_argument("--hops", type=int)
    pub.set_defaults(func=cmd_profile_publish)

    chat = client.add_parser("chat").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    create = chat.add_parser("create", parents=[common, secret])
    create.add_argument("members", nargs="+")
    create.add_argument("--open-write", action="store_true")
    create.add_argument("--allow-unverified", action="store_true")
    create.add_argument("--hops", type=int)
    create.set_defaults(func=cmd_chat_create)
    send = chat.add_parser("send", parents=[common, secret])
    send.add_argument("chat")
    send.add_argument("text")
    send.add_argument("--via-mixes", action="store_true")
    send.add_argument("--hops", type=int)
    send.set_defaults(func=cmd_chat_send)
    read = chat.add_parser("read", parents=[common, secret])
    read.add_argument("chat")
    read.set_defaults(func=cmd_chat_read)

    address = client.add_parser("address").add_subparsers(dest="sub", required=True, parser_class=_Parser)
    acreate = address.add_parser("create", parents=[common, secret])
    acreate.add_argument("--public-read", action="store_true")
    acreate.add_argument("--public-write", action="store_true")
    acreate.add_argument("--label")
    acreate.set_defaults(func=cmd_address_create)

    harness = top.add_parser("harness").add_subparsers(dest="action", required=True, parser_class=_Parser)
    scen = harness.add_parser("scenario", parents=[common], help="write a generated scenario file")
    scen.add_argument("--out")
    hrun = harness.add_parser("run", parents=[common], help="run one store and attack its trace")
    hrun.add_argument("--scenario")
    hrun.add_argument("--store", choices=["concealed", "baseline"], default="concealed")
    hrun.add_argument("--out", help="report file (default stdout)")
    hrun.add_argument("--trace", help="also write the server trace here")
    hrun.add_argument("--hops", type=int)
    cmp = harness.add_parser("compare", parents=[common], help="baseline vs concealed table")
    cmp.add_argument("reports", nargs="*", help="report files from 'harness run'")
    cmp.add_argument("--seeds", default="0-9")
    cmp.add_argument("--json")
    cmp.add_argument("--out")
    for sp in (scen, hrun, cmp):
        sp.add_argument("--users", type=int, default=20)
        sp.add_argument("--mixes", type=int, default=2)
        sp.add_argument("--rounds", type=int, default=12)
    scen.set_defaults(func=cmd_harness_scenario)
    hrun.set_defaults(func=cmd_harness_run)
    cmp.set_defaults(func=cmd_harness_compare)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    if args.command == "harness" and args.seed is None:
        args.seed = 0
    try:
        return args.func(args)
    except (AccessDenied, ServerError, ProtocolError, wire.ParseError, ConnectionError) as exc:
        print(f"concealed: protocol error: {exc}", file=sys.stderr)
        return 2
    except (UsageError, KeyringError, OsnError, ValueError, FileNotFoundError) as exc:
        print(f"concealed: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
