"""A user-operated mix node.

The mix owns a few wildcard-writable inboxes.  ``collect`` reads them, opens
the containers sealed to the mix and queues the onion layers inside.  When a
batch is ready, ``process_batch`` peels one layer from each, groups layers by
next destination, repacks them into fresh fixed-size containers and shuffles
the result; ``forward`` writes the containers and later prunes the inboxes.
"""
from __future__ import annotations

import hashlib
import logging
import threading
import time
from collections import Counter
from dataclasses import dataclass, field

from . import envelope, group
from .client import AddressSecrets, ClientEngine, MixInfo, ServerError

log = logging.getLogger(__name__)


@dataclass
class MixConfig:
    batch_size: int = 5
    flush_timeout: float = 2.0
    dedup_window: float = 600.0
    delete_delay: float | None = None  # defaults to dedup_window
    envelope_size: int = envelope.ENVELOPE_SIZE
    poll_interval: float = 0.5

    def __post_init__(self):
        if self.batch_size < 2:
            raise ValueError("batch size must be at least 2")
        if self.delete_delay is None:
            self.delete_delay = self.dedup_window
        if self.delete_delay < self.dedup_window:
            raise ValueError("messages may only be deleted after the dedup window")


@dataclass
class Inbox:
    secrets: AddressSecrets
    cursor: int = 0
    # (absolute index, time read) of messages not yet pruned.
    unpruned: list = field(default_factory=list)
    retired_at: float | None = None


@dataclass
class PendingLayer:
    layer: bytes
    arrived: float


class MixNode:
    def __init__(self, name: str, engine: ClientEngine, config: MixConfig | None = None,
                 keypair=None, rng=None, clock=time.monotonic, operator: str | None = None):
        self.name = name
        self.engine = engine
        self.config = config or MixConfig()
        self.rng = rng if rng is not None else group.SYSTEM_RNG
        self.keypair = keypair if keypair is not None else group.generate_keypair(self.rng)
        self.clock = clock
        self.operator = operator
        self.inboxes: list[Inbox] = []
        self.retiring: list[Inbox] = []
        self.pending: list[PendingLayer] = []
        self.outbox: list[tuple[str, bytes]] = []
        self.metrics = Counter()
        self._seen: dict[bytes, float] = {}
        self._lock = threading.Lock()

    @property
    def public_key(self) -> bytes:
        return group.public_bytes(self.keypair)

    # -- inboxes ----------------------------------------------------------------

    def register_inboxes(self, n: int) -> list[str]:
        """Create ``n`` fresh wildcard-write inboxes; previous ones start retiring."""
        if n < 1:
            raise ValueError("a mix needs at least one inbox to be reachable")
        fresh = [Inbox(self.engine.create_concealed_address(read=True, write=False, own=True))
                 for _ in range(n)]
        now = self.clock()
        for old in self.inboxes:
            old.retired_at = now
        self.retiring.extend(self.inboxes)
        self.inboxes = fresh
        return [i.secrets.c for i in fresh]

    def directory_entry(self) -> MixInfo:
        return MixInfo(self.name, self.public_key, tuple(i.secrets.c for i in self.inboxes),
                       self.operator)

    # -- collecting -----------------------------------------------------------

    def _expire_seen(self, now: float) -> None:
        horizon = now - self.config.dedup_window
        for digest in [d for d, t in self._seen.items() if t < horizon]:
            del self._seen[digest]

    def _is_duplicate(self, data: bytes, now: float) -> bool:
        digest = hashlib.sha256(data).digest()
        if digest in self._seen:
            return True
        self._seen[digest] = now
        return False

    def accept(self, container: bytes, now: float | None = None) -> int:
        """Queue the layers of one incoming container; returns how many were queued."""
        now = self.clock() if now is None else now
        with self._lock:
            self.metrics["containers_in"] += 1
            if len(container) != self.config.envelope_size:
                self.metrics["wrong_size"] += 1
                return 0
            if self._is_duplicate(container, now):
                self.metrics["duplicates"] += 1
                return 0
            try:
                layers = envelope.open_mix_container(self.keypair, container)
            except (group.CryptoError, envelope.EnvelopeError):
                self.metrics["undecryptable"] += 1
                return 0
            queued = 0
            for layer in layers:
                # A replayed layer inside a fresh container is still a replay.
                if self._is_duplicate(b"layer" + layer, now):
                    self.metrics["duplicates"] += 1
                    continue
                self.pending.append(PendingLayer(layer, now))
                queued += 1
            return queued

    def collect(self) -> int:
        """Read every inbox once; returns the number of layers queued."""
        now = self.clock()
        with self._lock:
            self._expire_seen(now)
        queued = 0
        for inbox in self.inboxes + self.retiring:
            reply = self.engine.read(inbox.secrets.c, inbox.secrets.r, inbox.cursor)
            first = reply.next_cursor - len(reply.payloads)
            for offset, payload in enumerate(reply.payloads):
                inbox.unpruned.append((first + offset, now))
                queued += self.accept(payload, now)
            inbox.cursor = reply.next_cursor
        return queued

    def ready(self, now: float | None = None) -> bool:
        now = self.clock() if now is None else now
        with self._lock:
            if not self.pending:
                return False
            if len(self.pending) >= self.config.batch_size:
                return True
            return now - self.pending[0].arrived >= self.config.flush_timeout

    def take_batch(self) -> list[bytes]:
        with self._lock:
            batch = [p.layer for p in self.pending]
            self.pending = []
        return batch

    # -- processing -----------------------------------------------------------

    def process_batch(self, batch: list[bytes]) -> list[tuple[str, bytes]]:
        """Peel, merge by next hop, repack into fixed-size containers, shuffle."""
        groups: dict[tuple[str, bytes | None], list[bytes]] = {}
        order = []
        for layer in batch:
            try:
                routed = envelope.peel_layer(self.keypair, layer)
            except (group.CryptoError, envelope.EnvelopeError):
                self.metrics["undecryptable"] += 1
                continue
            key = (routed.destination, routed.next_key)
            if key not in groups:
                groups[key] = []
                order.append(key)
            groups[key].append(routed.message)
        size = self.config.envelope_size
        outputs = []
        for dest, next_key in order:
            items = groups[dest, next_key]
            self.rng.shuffle(items)
            if next_key is None:
                containers = envelope.plain_containers(items, self.rng, size)
            else:
                containers = envelope.mix_containers(items, next_key, self.rng, size)
            outputs.extend((dest, c) for c in containers)
        self.rng.shuffle(outputs)
        return outputs

    # -- forwarding -----------------------------------------------------------

    def forward(self, outputs: list[tuple[str, bytes]] = ()) -> int:
        """Write queued outputs; failures stay queued for the next flush."""
        self.outbox.extend(outputs)
        remaining, sent = [], 0
        for dest, payload in self.outbox:
            try:
                self.engine.send(dest, payload)
                sent += 1
            except (ServerError, OSError) as exc:
                log.warning("mix %s: write to %s failed: %s", self.name, dest, exc)
                self.metrics["write_failures"] += 1
                remaining.append((dest, payload))
        self.outbox = remaining
        self.metrics["containers_out"] += sent
        return sent

    def flush(self, force: bool = False) -> int:
        """Process and forward the pending batch if it is ready; retry old failures either way."""
        outputs = []
        if force or self.ready():
            outputs = self.process_batch(self.take_batch())
        if outputs or self.outbox:
            return self.forward(outputs)
        return 0

    def prune(self, now: float | None = None) -> None:
        """Delete inbox messages read more than ``delete_delay`` ago; drop drained retired inboxes."""
        now = self.clock() if now is None else now
        for inbox in self.inboxes + self.retiring:
            due = [i for i, t in inbox.unpruned if now - t >= self.config.delete_delay]
            if due:
                upto = max(due) + 1
                self.engine.prune(inbox.secrets.c, inbox.secrets.o, upto)
                inbox.unpruned = [(i, t) for i, t in inbox.unpruned if i >= upto]
        still = []
        for inbox in self.retiring:
            if not inbox.unpruned and now - inbox.retired_at >= self.config.dedup_window:
                self.engine.delete(inbox.secrets.c, inbox.secrets.o)
                self.metrics["retired"] += 1
            else:
                still.append(inbox)
        self.retiring = still

    def step(self) -> int:
        """One collector pass plus one flush; handy for simulations."""
        self.collect()
        sent = self.flush()
        self.prune()
        return sent

    def run(self, stop: threading.Event) -> None:
        """Collector and flusher loops until ``stop`` is set."""
        def collector():
            while not stop.is_set():
                try:
                    self.collect()
                    self.prune()
                except Exception:
                    log.exception("mix %s: collect failed", self.name)
                stop.wait(self.config.poll_interval)

        thread = threading.Thread(target=collector, daemon=True)
        thread.start()
        while not stop.is_set():
            try:
                self.flush()
            except Exception:
                log.exception("mix %s: flush failed", self.name)
            stop.wait(min(self.config.poll_interval, self.config.flush_timeout / 4))
        thread.join()
