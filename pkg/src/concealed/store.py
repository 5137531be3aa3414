"""The address store: concealed mailboxes guarded by challenge-response proofs.

The store keeps one table of :class:`AddressRecord` and two short-lived maps
(open challenges and half-finished creations).  Nothing about who sent a
request is kept anywhere; ``snapshot`` serializes the address table and
nothing else.
"""
from __future__ import annotations

import json
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from . import group
from .group import AddressKey, GroupParams, is_wildcard
from . import wire
from .wire import (
    Ack,
    AddressCreated,
    ChallengeAnswer,
    ChallengeIssued,
    CreateAddress,
    CreatedBlob,
    DeleteAddress,
    Error,
    Messages,
    PruneAddress,
    ReadAddress,
    UpdateAddress,
    WriteAddress,
)

READ = "read"
WRITE = "write"
OWN = "own"

DEFAULT_CHALLENGE_TTL = 30.0
DEFAULT_CREATION_TTL = 300.0
DEFAULT_MAX_PAYLOAD = 64 * 1024
HELLO_KEY_SIZE = group.CONTENT_KEY_SIZE


class RestoreError(ValueError):
    pass


@dataclass
class StoreConfig:
    challenge_ttl: float = DEFAULT_CHALLENGE_TTL
    creation_ttl: float = DEFAULT_CREATION_TTL
    max_payload: int = DEFAULT_MAX_PAYLOAD
    allow_ownerless: bool = False


@dataclass
class AddressRecord:
    c: str
    p_r: AddressKey
    p_w: AddressKey
    p_o: AddressKey
    messages: list = field(default_factory=list)
    # Absolute index of messages[0]; pruning advances it so cursors stay valid.
    base: int = 0
    # Bumped on every key change so in-flight challenges for old keys fail.
    version: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def key_for(self, permission: str) -> AddressKey:
        return {READ: self.p_r, WRITE: self.p_w, OWN: self.p_o}[permission]


@dataclass
class ChallengeSession:
    session_id: str
    c: str
    permission: str
    pending_frame: object
    expected: int
    expires_at: float
    key_version: int
    creation: bool = False


@dataclass
class PendingCreation:
    c: str
    session_key: bytes
    r: int
    w: int
    o: int
    expires_at: float


def encode_creation_blob(c: str, r: int, w: int, o: int) -> bytes:
    return f"{c} {r:x} {w:x} {o:x}".encode()


def decode_creation_blob(data: bytes) -> tuple[str, int, int, int]:
    try:
        c, r, w, o = data.decode().split(" ")
        if not wire.is_address_id(c):
            raise ValueError("bad address id")
        return c, int(r, 16), int(w, 16), int(o, 16)
    except (UnicodeDecodeError, ValueError) as exc:
        raise ValueError(f"malformed creation blob: {exc}") from None


class AddressStore:
    """Server-side state machine answering one client frame at a time.

    ``handle`` is safe to call from many threads.  Mutations of one address
    are serialized by that record's lock; the challenge and creation maps
    have their own lock.
    """

    def __init__(self, params: GroupParams, server_key=None, rng=None,
                 clock: Callable[[], float] = time.monotonic,
                 config: StoreConfig | None = None):
        self.params = params
        self.rng = rng if rng is not None else group.SYSTEM_RNG
        self.server_key = server_key if server_key is not None else group.generate_keypair(self.rng)
        self.clock = clock
        self.config = config or StoreConfig()
        self.observer: Optional[Callable[[dict], None]] = None
        self._records: dict[str, AddressRecord] = {}
        self._sessions: dict[str, ChallengeSession] = {}
        self._creations: dict[str, PendingCreation] = {}
        self._table_lock = threading.Lock()
        self._rng_lock = threading.Lock()

    @property
    def public_key(self) -> bytes:
        return group.public_bytes(self.server_key)

    # -- helpers --------------------------------------------------------------

    def _emit(self, **event) -> None:
        if self.observer is not None:
            self.observer(event)

    def _random_id(self) -> str:
        with self._rng_lock:
            return self.rng.randbytes(16).hex()

    def _record(self, c: str) -> AddressRecord | None:
        with self._table_lock:
            return self._records.get(c)

    def _issue(self, c: str, permission: str, key: int, frame, version: int,
               creation: bool = False) -> ChallengeIssued:
        with self._rng_lock:
            challenge, expected = group.make_challenge(self.params, key, self.rng)
        with self._table_lock:
            sid = self._fresh_id(self._sessions)
            self._sessions[sid] = ChallengeSession(
                sid, c, permission, frame, expected,
                self.clock() + self.config.challenge_ttl, version, creation)
        return ChallengeIssued(sid, challenge.c0, challenge.c1)

    def _fresh_id(self, table) -> str:
        # Caller holds the table lock.
        while True:
            candidate = self._random_id()
            if candidate not in table and candidate not in self._records \
                    and candidate not in self._creations:
                return candidate

    # -- dispatch ------------------------------------------------------------

    def handle(self, frame):
        if isinstance(frame, CreateAddress):
            return self.handle_create(frame.hello)
        if isinstance(frame, UpdateAddress):
            return self.handle_update(frame)
        if isinstance(frame, ReadAddress):
            return self.handle_read(frame.c, frame.cursor)
        if isinstance(frame, WriteAddress):
            return self.handle_write(frame.c, frame.payload)
        if isinstance(frame, ChallengeAnswer):
            return self.handle_answer(frame.session_id, frame.value)
        if isinstance(frame, PruneAddress):
            return self._guarded(frame.c, OWN, frame)
        if isinstance(frame, DeleteAddress):
            return self._guarded(frame.c, OWN, frame)
        return Error(wire.MALFORMED, "not a client frame")

    def handle_line(self, line: bytes) -> bytes:
        try:
            frame = wire.decode(line)
        except wire.ParseError as exc:
            return wire.encode(Error(wire.MALFORMED, str(exc)))
        return wire.encode(self.handle(frame))

    # -- operations -----------------------------------------------------------

    def handle_create(self, hello: bytes):
        try:
            session_key = group.hybrid_open(self.server_key, hello)
        except group.CryptoError:
            return Error(wire.BAD_HELLO, "hello does not open under the server key")
        if len(session_key) != HELLO_KEY_SIZE:
            return Error(wire.BAD_HELLO, "hello must carry a 32-byte session key")
        self.sweep()
        with self._rng_lock:
            r = self.rng.randrange(1, self.params.order)
            w = self.rng.randrange(1, self.params.order)
            o = self.rng.randrange(1, self.params.order)
        with self._table_lock:
            c = self._fresh_id(self._sessions)
            self._creations[c] = PendingCreation(
                c, session_key, r, w, o, self.clock() + self.config.creation_ttl)
        with self._rng_lock:
            blob = group.seal(session_key, encode_creation_blob(c, r, w, o), self.rng)
        return CreatedBlob(blob)

    def _check_keys(self, frame: UpdateAddress):
        for key in (frame.p_r, frame.p_w, frame.p_o):
            try:
                group.check_public_key(self.params, key)
            except group.InvalidKey:
                return Error(wire.INVALID_KEY, "key outside the order-q subgroup")
        if is_wildcard(frame.p_o) and not self.config.allow_ownerless:
            return Error(wire.OWNER_REQUIRED, "owner key may not be the wildcard")
        return None

    def handle_update(self, frame: UpdateAddress):
        problem = self._check_keys(frame)
        if problem is not None:
            return problem
        with self._table_lock:
            pending = self._creations.get(frame.c)
            if pending is not None and pending.expires_at <= self.clock():
                del self._creations[frame.c]
                pending = None
        if pending is not None:
            return self._issue(frame.c, OWN, self.params.exp(pending.o), frame, -1,
                               creation=True)
        return self._guarded(frame.c, OWN, frame)

    def handle_read(self, c: str, cursor: int = 0):
        return self._guarded(c, READ, ReadAddress(c, cursor))

    def handle_write(self, c: str, payload: bytes):
        if len(payload) > self.config.max_payload:
            return Error(wire.TOO_LARGE, f"payload exceeds {self.config.max_payload} bytes")
        return self._guarded(c, WRITE, WriteAddress(c, payload))

    def _guarded(self, c: str, permission: str, frame):
        record = self._record(c)
        if record is None:
            return Error(wire.NO_SUCH_ADDRESS)
        with record.lock:
            key = record.key_for(permission)
            version = record.version
            if is_wildcard(key):
                return self._execute(record, frame)
        return self._issue(c, permission, key, frame, version)

    def handle_answer(self, session_id: str, value: int):
        with self._table_lock:
            session = self._sessions.pop(session_id, None)
        if session is None:
            return Error(wire.UNKNOWN_SESSION)
        if session.expires_at <= self.clock():
            return Error(wire.CHALLENGE_EXPIRED)
        if value != session.expected:
            return Error(wire.ACCESS_DENIED)
        if session.creation:
            return self._finish_creation(session)
        record = self._record(session.c)
        if record is None:
            return Error(wire.NO_SUCH_ADDRESS)
        with record.lock:
            if record.version != session.key_version:
                return Error(wire.ACCESS_DENIED, "address keys changed")
            return self._execute(record, session.pending_frame)

    def _finish_creation(self, session: ChallengeSession):
        frame: UpdateAddress = session.pending_frame
        with self._table_lock:
            pending = self._creations.pop(session.c, None)
            if pending is None or pending.expires_at <= self.clock():
                return Error(wire.NO_SUCH_ADDRESS)
            self._records[session.c] = AddressRecord(session.c, frame.p_r, frame.p_w, frame.p_o)
        self._emit(op="create", c=session.c)
        return AddressCreated(session.c)

    def _execute(self, record: AddressRecord, frame):
        # Caller holds record.lock.
        if isinstance(frame, ReadAddress):
            start = max(frame.cursor - record.base, 0)
            payloads = tuple(record.messages[start:])
            return Messages(payloads, record.base + len(record.messages))
        if isinstance(frame, WriteAddress):
            record.messages.append(frame.payload)
            self._emit(op="append", c=record.c, index=record.base + len(record.messages) - 1,
                       size=len(frame.payload))
            return Ack()
        if isinstance(frame, UpdateAddress):
            record.p_r, record.p_w, record.p_o = frame.p_r, frame.p_w, frame.p_o
            record.version += 1
            self._emit(op="rekey", c=record.c)
            return AddressCreated(record.c)
        if isinstance(frame, PruneAddress):
            drop = min(max(frame.upto - record.base, 0), len(record.messages))
            if drop:
                del record.messages[:drop]
                record.base += drop
                self._emit(op="prune", c=record.c, upto=record.base)
            return Ack()
        if isinstance(frame, DeleteAddress):
            with self._table_lock:
                self._records.pop(record.c, None)
            record.version += 1
            record.messages.clear()
            self._emit(op="delete", c=record.c)
            return Ack()
        raise TypeError(f"cannot execute {frame!r}")

    # -- housekeeping ---------------------------------------------------------

    def sweep(self) -> int:
        """Drop expired challenges and creations; returns how many were removed."""
        now = self.clock()
        with self._table_lock:
            dead_sessions = [k for k, s in self._sessions.items() if s.expires_at <= now]
            dead_creations = [k for k, p in self._creations.items() if p.expires_at <= now]
            for k in dead_sessions:
                del self._sessions[k]
            for k in dead_creations:
                del self._creations[k]
        return len(dead_sessions) + len(dead_creations)

    def open_sessions(self) -> int:
        with self._table_lock:
            return len(self._sessions)

    def pending_creations(self) -> int:
        with self._table_lock:
            return len(self._creations)

    def addresses(self) -> list[str]:
        with self._table_lock:
            return sorted(self._records)

    # -- persistence ----------------------------------------------------------

    def snapshot(self) -> bytes:
        with self._table_lock:
            records = sorted(self._records.values(), key=lambda r: r.c)
        entries = []
        for record in records:
            with record.lock:
                entries.append({
                    "c": record.c,
                    "p_r": group.encode_key(record.p_r),
                    "p_w": group.encode_key(record.p_w),
                    "p_o": group.encode_key(record.p_o),
                    "base": record.base,
                    "messages": [m.hex() for m in record.messages],
                })
        doc = {"format": "concealed-store-v1", "group": self.params.name, "addresses": entries}
        return json.dumps(doc, sort_keys=True, separators=(",", ":")).encode() + b"\n"

    def restore(self, data: bytes) -> "AddressStore":
        """Replace the address table with the contents of a snapshot."""
        try:
            doc = json.loads(data)
            if doc.get("format") != "concealed-store-v1":
                raise ValueError("unknown snapshot format")
            if doc.get("group") != self.params.name:
                raise ValueError("snapshot was taken with a different group")
            records = {}
            for entry in doc["addresses"]:
                c = entry["c"]
                if not wire.is_address_id(c) or c in records:
                    raise ValueError(f"bad or duplicate address id {c!r}")
                keys = [group.decode_key(entry[k], self.params) for k in ("p_r", "p_w", "p_o")]
                base = entry["base"]
                if not isinstance(base, int) or base < 0:
                    raise ValueError("bad base index")
                messages = [bytes.fromhex(m) for m in entry["messages"]]
                records[c] = AddressRecord(c, *keys, messages=messages, base=base)
        except (ValueError, KeyError, TypeError, AttributeError, group.CryptoError) as exc:
            raise RestoreError(f"corrupt snapshot: {exc}") from None
        with self._table_lock:
            self._records = records
            self._sessions.clear()
            self._creations.clear()
        return self


# -- connections ---------------------------------------------------------------

class LocalConnection:
    """In-process connection; each request is encoded and decoded like on a socket."""

    def __init__(self, store: AddressStore):
        self.store = store

    def request(self, frame):
        reply = self.store.handle_line(wire.encode(frame))
        return wire.decode(reply)

    def close(self) -> None:
        pass
