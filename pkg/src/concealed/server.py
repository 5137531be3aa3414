"""TCP front end for :class:`AddressStore`, its config file and a socket client."""
from __future__ import annotations

import configparser
import logging
import os
import socket
import socketserver
import threading
from dataclasses import dataclass
from pathlib import Path

from . import group, wire
from .store import AddressStore, StoreConfig

log = logging.getLogger(__name__)

MAX_LINE = 2 * 64 * 1024 + 4096


@dataclass
class ServerConfig:
    listen: str = "127.0.0.1:7007"
    snapshot_path: str = ""
    server_key_path: str = ""
    group: str = "schnorr2048-256"
    challenge_ttl: float = 30.0
    creation_ttl: float = 300.0
    max_payload: int = 64 * 1024
    allow_ownerless_addresses: bool = False

    def store_config(self) -> StoreConfig:
        return StoreConfig(self.challenge_ttl, self.creation_ttl, self.max_payload,
                           self.allow_ownerless_addresses)


def load_config(path: str | os.PathLike | None) -> ServerConfig:
    """Read a ``key = value`` file; ``#`` starts a comment line."""
    cfg = ServerConfig()
    if not path:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.read_string("[server]\n" + Path(path).read_text())
    section = parser["server"]
    known = {f for f in ServerConfig.__dataclass_fields__}
    for key in section:
        if key not in known:
            raise ValueError(f"unknown config key {key!r}")
    cfg.listen = section.get("listen", cfg.listen)
    cfg.snapshot_path = section.get("snapshot_path", cfg.snapshot_path)
    cfg.server_key_path = section.get("server_key_path", cfg.server_key_path)
    cfg.group = section.get("group", cfg.group)
    cfg.challenge_ttl = section.getfloat("challenge_ttl", cfg.challenge_ttl)
    cfg.creation_ttl = section.getfloat("creation_ttl", cfg.creation_ttl)
    cfg.max_payload = section.getint("max_payload", cfg.max_payload)
    cfg.allow_ownerless_addresses = section.getboolean(
        "allow_ownerless_addresses", cfg.allow_ownerless_addresses)
    return cfg


def parse_endpoint(text: str) -> tuple[str, int]:
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise ValueError(f"endpoint must look like host:port, got {text!r}")
    return host or "127.0.0.1", int(port)


def load_or_create_server_key(path: str | os.PathLike, rng=None):
    """Load the X25519 server key from ``path``; create it (and ``path.pub``) if missing."""
    path = Path(path)
    if path.exists():
        return group.load_private(bytes.fromhex(path.read_text().strip()))
    key = group.generate_keypair(rng or group.SYSTEM_RNG)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(group.private_bytes(key).hex() + "\n")
    os.chmod(path, 0o600)
    Path(str(path) + ".pub").write_text(group.public_bytes(key).hex() + "\n")
    return key


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        store: AddressStore = self.server.store
        while True:
            line = self.rfile.readline(MAX_LINE + 1)
            if not line:
                return
            if len(line) > MAX_LINE and not line.endswith(b"\n"):
                self.wfile.write(wire.encode(wire.Error(wire.TOO_LARGE, "line too long")))
                return
            self.wfile.write(store.handle_line(line))
            self.wfile.flush()


class StoreServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, store: AddressStore, endpoint: tuple[str, int]):
        super().__init__(endpoint, _Handler)
        self.store = store

    @property
    def endpoint(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def build_store(cfg: ServerConfig, rng=None) -> AddressStore:
    params = group.group_by_name(cfg.group)
    key = load_or_create_server_key(cfg.server_key_path, rng) if cfg.server_key_path else None
    store = AddressStore(params, key, rng=rng, config=cfg.store_config())
    if cfg.snapshot_path and Path(cfg.snapshot_path).exists():
        store.restore(Path(cfg.snapshot_path).read_bytes())
        log.info("restored %d addresses", len(store.addresses()))
    return store


def save_snapshot(store: AddressStore, path: str | os.PathLike) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(store.snapshot())
    os.replace(tmp, path)


class ProtocolError(Exception):
    pass


class TcpConnection:
    """Blocking client side of the line protocol; one request in flight at a time."""

    def __init__(self, endpoint: str, timeout: float = 30.0):
        self.sock = socket.create_connection(parse_endpoint(endpoint), timeout=timeout)
        self._reader = self.sock.makefile("rb")
        self._lock = threading.Lock()

    def request(self, frame):
        with self._lock:
            self.sock.sendall(wire.encode(frame))
            line = self._reader.readline(MAX_LINE + 1)
        if not line:
            raise ProtocolError("server closed the connection")
        return wire.decode(line)

    def close(self) -> None:
        self._reader.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
