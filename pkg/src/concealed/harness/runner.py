"""Drive a scenario against the concealed stack or the baseline store."""
from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field

from ..client import ClientEngine, Contact, Keyring
from ..group import SCHNORR_2048_256
from ..mix import MixConfig, MixNode
from ..osn import OsnClient, ProfileEntry
from ..store import AddressStore
from .baseline import BaselineStore
from .scenario import ScenarioScript
from .trace import Recorder, RecordingConnection, ServerTrace

MIX_PHASE = 0.85
POLL_PHASE = 0.9
MAX_DRAIN_ROUNDS = 10


class VirtualClock:
    def __init__(self, now: float = 0.0):
        self.now = now

    def __call__(self) -> float:
        return self.now

    def set(self, t: float) -> None:
        self.now = max(self.now, t)


@dataclass(frozen=True)
class Query:
    """One scripted action and the trace index of its first event."""
    index: int
    actor: str
    targets: tuple
    category: str
    media: bool = False


@dataclass
class Truth:
    users: list[str]
    endpoints: dict[str, str]
    edges: set
    locations: dict[str, str]
    queries: list[Query] = field(default_factory=list)
    posts: dict[str, int] = field(default_factory=dict)
    grants: dict[str, int] = field(default_factory=dict)

    def degree(self, user: str) -> int:
        return sum(1 for e in self.edges if user in e)

    def neighbors(self, user: str) -> set:
        return {v for e in self.edges if user in e for v in e if v != user}

    def of(self, category: str) -> list[Query]:
        return [q for q in self.queries if q.category == category]


@dataclass
class Public:
    """What the adversary knows without looking at the trace."""
    user_names: list[str]
    user_endpoints: list[str]
    mix_objects: list[str] = field(default_factory=list)


@dataclass
class RunResult:
    trace: ServerTrace
    truth: Truth
    public: Public
    snapshot: bytes
    delivered: float
    elapsed: float


def _truth(script: ScenarioScript) -> Truth:
    return Truth(list(script.users), dict(script.endpoints),
                 {frozenset(e) for e in script.edges}, dict(script.locations))


def _schedule(script: ScenarioScript, drain: int):
    """Scripted actions plus per-round mix and poll phases, in time order."""
    items = [(a.time, 1, i, a) for i, a in enumerate(script.actions)]
    last = script.rounds + drain if script.users else -1
    for k in range(0, last + 1):
        items.append((k + MIX_PHASE, 0, -1, ("mixes", k)))
        items.append((k + POLL_PHASE, 0, -1, ("poll", k)))
    items.sort(key=lambda x: (x[0], x[1], x[2]))
    return items


CATEGORY = {"dm": "message", "group-send": "group", "post": "post", "grant": "grant",
            "group-remove": "rekey"}


def run_concealed(script: ScenarioScript, params=SCHNORR_2048_256,
                  mix_config: MixConfig | None = None, hops: int | None = None) -> RunResult:
    start = time.perf_counter()
    seed = script.seed
    clock = VirtualClock()
    rec = Recorder("concealed", clock)
    truth = _truth(script)
    store = AddressStore(params, rng=random.Random(f"store-{seed}"), clock=clock)
    store.observer = rec.observe

    mixes = []
    for j in range(script.mixes):
        rng = random.Random(f"mix-{seed}-{j}")
        engine = ClientEngine(RecordingConnection(store, rec, f"10.0.1.{j + 1}"), params, store.public_key, rng)
        config = mix_config or MixConfig(batch_size=8, flush_timeout=2.0)
        node = MixNode(f"mix{j}", engine, config, rng=rng, clock=clock)
        node.register_inboxes(2)
        mixes.append(node)
    directory = [m.directory_entry() for m in mixes]

    users: dict[str, OsnClient] = {}
    for name in script.users:
        rng = random.Random(f"user-{seed}-{name}")
        ring = Keyring.generate(name, rng)
        engine = ClientEngine(RecordingConnection(store, rec, script.endpoints[name]), params,
                              store.public_key, rng)
        ring.inbox = engine.create_concealed_address(read=True, write=False, own=True)
        users[name] = OsnClient(ring, engine, directory, hops=hops)
    for a, b in script.edges:
        for x, y in ((a, b), (b, a)):
            other = users[y].ring
            users[x].ring.add_contact(Contact(y, other.public_key, other.inbox.c, other.verify_key,
                                              verified=True))

    group_keys: dict[str, tuple[int, bytes]] = {}
    expected, received = set(), set()
    key_rng = random.Random(f"groupkeys-{seed}")

    def step_mixes(k):
        order = list(mixes)
        random.Random(f"mixorder-{seed}-{k}").shuffle(order)
        for m in order:
            m.collect()
            m.flush()

    def poll(k):
        order = list(script.users)
        random.Random(f"poll-{seed}-{k}").shuffle(order)
        for name in order:
            for note in users[name].poll_inbox():
                if note.get("type") in ("dm", "group-msg"):
                    received.add((name, note["text"]))

    def busy():
        return any(m.pending or m.outbox for m in mixes)

    drain_from = script.rounds + 1
    for t, _, _, item in _schedule(script, MAX_DRAIN_ROUNDS):
        clock.set(t)
        if isinstance(item, tuple):
            phase, k = item
            if k > drain_from and not busy() and phase == "mixes":
                break
            step_mixes(k) if phase == "mixes" else poll(k)
            continue
        a = item
        osn = users[a.actor]
        mark = rec.mark()
        if a.kind == "publish":
            osn.publish_profile([ProfileEntry("Name", a.actor),
                                 ProfileEntry("Birthday", a.text, "friends"),
                                 ProfileEntry("City", script.locations[script.endpoints[a.actor]], "friends")],
                                feeds={"Posts": "friends"})
        elif a.kind == "grant":
            osn.grant_profile_access(a.targets[0], ["friends"])
            truth.grants[a.actor] = truth.grants.get(a.actor, 0) + 1
        elif a.kind == "group-create":
            group_keys[a.group] = (1, key_rng.randbytes(32))
            for m in a.targets:
                osn.notify(m, {"type": "group-key", "group": a.group, "gen": 1,
                               "key": group_keys[a.group][1].hex()})
        elif a.kind == "dm":
            osn.notify(a.targets[0], {"type": "dm", "text": a.text})
            expected.add((a.targets[0], a.text))
        elif a.kind == "post":
            osn.post_to_feed("Posts", a.text)
            truth.posts[a.actor] = truth.posts.get(a.actor, 0) + 1
        elif a.kind == "group-send":
            # Fan-out: one onion per member, each to that member's own inbox.
            for m in a.targets:
                osn.notify(m, {"type": "group-msg", "group": a.group, "text": a.text})
                expected.add((m, a.text))
        elif a.kind == "group-remove":
            gen = group_keys[a.group][0] + 1
            group_keys[a.group] = (gen, key_rng.randbytes(32))
            for m in a.targets:
                osn.notify(m, {"type": "group-key", "group": a.group, "gen": gen,
                               "key": group_keys[a.group][1].hex()})
        if a.kind in CATEGORY and rec.mark() > mark:
            truth.queries.append(Query(mark, a.actor, tuple(a.targets), CATEGORY[a.kind], a.media))

    public = Public(list(script.users), [script.endpoints[u] for u in script.users],
                    sorted(c for m in directory for c in m.inboxes))
    delivered = len(expected & received) / len(expected) if expected else 1.0
    return RunResult(rec.trace, truth, public, store.snapshot(), delivered, time.perf_counter() - start)


def run_baseline(script: ScenarioScript) -> RunResult:
    start = time.perf_counter()
    clock = VirtualClock()
    rec = Recorder("baseline", clock)
    truth = _truth(script)
    server = BaselineStore(rec)
    ep = script.endpoints
    for name in script.users:
        server.login(ep[name], name)
        for kind in ("mbox", "profile", "feed", "keys"):
            server.create(ep[name], name, f"{kind}:{name}")
    expected = set()
    for t, _, _, item in _schedule(script, 0):
        clock.set(t)
        if isinstance(item, tuple):
            phase, k = item
            if phase == "poll":
                order = list(script.users)
                random.Random(f"poll-{script.seed}-{k}").shuffle(order)
                for name in order:
                    server.fetch(ep[name], name)
            continue
        a = item
        mark = rec.mark()
        if a.kind == "publish":
            body = json.dumps({"Name": a.actor, "Birthday": a.text,
                               "City": script.locations[ep[a.actor]]}, sort_keys=True)
            server.put_profile(ep[a.actor], a.actor, body)
        elif a.kind == "grant":
            server.grant(ep[a.actor], a.actor, a.targets[0], "friends")
            server.read_profile(ep[a.targets[0]], a.targets[0], a.actor)
            truth.grants[a.actor] = truth.grants.get(a.actor, 0) + 1
        elif a.kind == "group-create":
            server.group_create(ep[a.actor], a.actor, a.group, [a.actor] + list(a.targets))
        elif a.kind == "dm":
            server.send(ep[a.actor], a.actor, a.targets[0], a.text)
            expected.add((a.targets[0], a.text))
        elif a.kind == "post":
            server.post(ep[a.actor], a.actor, a.text)
            truth.posts[a.actor] = truth.posts.get(a.actor, 0) + 1
        elif a.kind == "group-send":
            server.group_send(ep[a.actor], a.actor, a.group, a.text)
        elif a.kind == "group-remove":
            server.group_remove(ep[a.actor], a.actor, a.group, a.removed)
        if a.kind in CATEGORY and rec.mark() > mark:
            truth.queries.append(Query(mark, a.actor, tuple(a.targets), CATEGORY[a.kind], a.media))
    public = Public(list(script.users), [ep[u] for u in script.users])
    return RunResult(rec.trace, truth, public, server.snapshot(), 1.0, time.perf_counter() - start)


def run_scenario(script: ScenarioScript, store: str = "concealed", **kwargs) -> RunResult:
    if store == "concealed":
        return run_concealed(script, **kwargs)
    if store == "baseline":
        return run_baseline(script)
    raise ValueError(f"unknown store kind {store!r}")
