import itertools
import re
import random
import threading

import pytest

from concealed import group, wire
from concealed.group import TEST_GROUP, WILDCARD, Challenge
from concealed.store import AddressStore, LocalConnection, RestoreError, StoreConfig, decode_creation_blob
from concealed.wire import (
    Ack, AddressCreated, ChallengeAnswer, ChallengeIssued, CreateAddress, CreatedBlob,
    DeleteAddress, Error, Messages, PruneAddress, ReadAddress, UpdateAddress, WriteAddress,
)

from conftest import slow_inverse, slow_pow

P, Q, G = 23, 11, 4


def make_store(clock=None, **config):
    kwargs = {"rng": random.Random(7), "config": StoreConfig(**config)}
    if clock is not None:
        kwargs["clock"] = clock
    return AddressStore(TEST_GROUP, **kwargs)


def hello_for(store, rng):
    key = group.new_content_key(rng)
    return key, group.hybrid_seal(store.public_key, key, rng)


def answer(store, issued, secret):
    value = group.solve_challenge(TEST_GROUP, secret, Challenge(issued.c0, issued.c1))
    return store.handle(ChallengeAnswer(issued.session_id, value))


def create(store, rng, r=3, w=5, o=7, wild=()):
    """Run the creation flow; secrets named in ``wild`` become wildcards."""
    key, hello = hello_for(store, rng)
    blob = store.handle(CreateAddress(hello))
    c, r0, w0, o0 = decode_creation_blob(group.open_sealed(key, blob.ciphertext))
    pub = {n: WILDCARD if n in wild else slow_pow(G, s, P) for n, s in (("r", r), ("w", w), ("o", o))}
    issued = store.handle(UpdateAddress(c, pub["r"], pub["w"], pub["o"]))
    assert isinstance(issued, ChallengeIssued)
    assert answer(store, issued, o0) == AddressCreated(c)
    return c


def privileged(store, frame, secret):
    issued = store.handle(frame)
    assert isinstance(issued, ChallengeIssued)
    return answer(store, issued, secret)


def test_create_returns_secrets_below_q(rng):
    store = make_store()
    key, hello = hello_for(store, rng)
    blob = store.handle(CreateAddress(hello))
    assert isinstance(blob, CreatedBlob)
    c, r, w, o = decode_creation_blob(group.open_sealed(key, blob.ciphertext))
    assert wire.is_address_id(c)
    assert all(0 < s < Q for s in (r, w, o))
    # Not an address until the first update succeeds.
    assert store.handle(ReadAddress(c, 0)) == Error(wire.NO_SUCH_ADDRESS)


def test_two_creations_distinct(rng):
    store = make_store()
    assert create(store, rng) != create(store, rng)


def test_bad_hello():
    store = make_store()
    assert store.handle(CreateAddress(b"junk")).code == wire.BAD_HELLO


def test_replayed_hello_after_expiry(rng, clock):
    store = make_store(clock)
    key, hello = hello_for(store, rng)
    first = decode_creation_blob(group.open_sealed(key, store.handle(CreateAddress(hello)).ciphertext))
    clock.advance(301)
    assert store.handle(UpdateAddress(first[0], 18, 18, 18)) == Error(wire.NO_SUCH_ADDRESS)
    second = decode_creation_blob(group.open_sealed(key, store.handle(CreateAddress(hello)).ciphertext))
    assert second[0] != first[0]
    assert store.pending_creations() == 1


def test_creation_with_wrong_owner_answer(rng):
    store = make_store()
    key, hello = hello_for(store, rng)
    c, *_ = decode_creation_blob(group.open_sealed(key, store.handle(CreateAddress(hello)).ciphertext))
    issued = store.handle(UpdateAddress(c, 18, 18, 18))
    good = group.solve_challenge(TEST_GROUP, 1, Challenge(issued.c0, issued.c1))
    bad = next(v for v in (1, 2, 3, 4) if v != good)
    assert store.handle(ChallengeAnswer(issued.session_id, bad)).code in (wire.ACCESS_DENIED,)
    assert c not in store.addresses()


def test_owner_update_then_reads_need_new_key(rng):
    store = make_store()
    c = create(store, rng, r=3, o=7)
    assert privileged(store, UpdateAddress(c, slow_pow(G, 2, P), 9, slow_pow(G, 7, P)), 7) == AddressCreated(c)
    assert privileged(store, ReadAddress(c, 0), 3) == Error(wire.ACCESS_DENIED)
    assert privileged(store, ReadAddress(c, 0), 2) == Messages((), 0)


def test_wrong_update_answer_keeps_keys(rng):
    store = make_store()
    c = create(store, rng, r=3, o=7)
    assert privileged(store, UpdateAddress(c, WILDCARD, 9, 9), 6) == Error(wire.ACCESS_DENIED)
    assert isinstance(store.handle(ReadAddress(c, 0)), ChallengeIssued)


def test_update_to_wildcard_read(rng):
    store = make_store()
    c = create(store, rng, o=7)
    privileged(store, UpdateAddress(c, WILDCARD, 9, slow_pow(G, 7, P)), 7)
    assert store.handle(ReadAddress(c, 0)) == Messages((), 0)


def test_update_unknown_address():
    store = make_store()
    assert store.handle(UpdateAddress("ab" * 16, 18, 18, 18)) == Error(wire.NO_SUCH_ADDRESS)


def test_update_rejects_bad_keys(rng):
    store = make_store()
    c = create(store, rng)
    assert store.handle(UpdateAddress(c, 5, 18, 18)).code == wire.INVALID_KEY
    assert store.handle(UpdateAddress(c, 18, 18, WILDCARD)).code == wire.OWNER_REQUIRED


def test_ownerless_allowed_when_configured(rng):
    store = make_store(allow_ownerless=True)
    c = create(store, rng, wild=("o",))
    assert store.handle(PruneAddress(c, 0)) == Ack()


def test_read_worked_example(rng, monkeypatch):
    store = make_store()
    c = create(store, rng, r=3, wild=("w",))
    store.handle(WriteAddress(c, b"hi"))
    forced = lambda params, key, rng=None: (group.encrypt_nonce(params, key, 5, 7), 7)
    monkeypatch.setattr("concealed.store.group.make_challenge", forced)
    issued = store.handle(ReadAddress(c, 0))
    assert (issued.c0, issued.c1) == (slow_pow(4, 5, 23), slow_pow(18, 5, 23) * 7 % 23) == (12, 21)
    assert 21 * slow_inverse(slow_pow(12, 3, 23), 23) % 23 == 7
    assert store.handle(ChallengeAnswer(issued.session_id, 7)) == Messages((b"hi",), 1)
    issued = store.handle(ReadAddress(c, 0))
    assert store.handle(ChallengeAnswer(issued.session_id, 6)) == Error(wire.ACCESS_DENIED)


def test_wildcard_write_and_cursor(rng):
    store = make_store()
    c = create(store, rng, wild=("r", "w"))
    for payload in (b"a", b"b", b"c"):
        assert store.handle(WriteAddress(c, payload)) == Ack()
    assert store.handle(ReadAddress(c, 0)) == Messages((b"a", b"b", b"c"), 3)
    assert store.handle(ReadAddress(c, 2)) == Messages((b"c",), 3)
    assert store.handle(ReadAddress(c, 9)) == Messages((), 3)


def test_failed_write_challenge_discards(rng):
    store = make_store()
    c = create(store, rng, w=5, wild=("r",))
    assert privileged(store, WriteAddress(c, b"x"), 4) == Error(wire.ACCESS_DENIED)
    assert privileged(store, WriteAddress(c, b"y"), 5) == Ack()
    assert store.handle(ReadAddress(c, 0)) == Messages((b"y",), 1)


def test_too_large(rng):
    store = make_store(max_payload=10)
    c = create(store, rng, wild=("w",))
    assert store.handle(WriteAddress(c, b"x" * 11)).code == wire.TOO_LARGE
    assert store.handle(WriteAddress(c, b"x" * 10)) == Ack()


def test_concurrent_wildcard_writers(rng):
    store = make_store()
    c = create(store, rng, wild=("r", "w"))
    barrier = threading.Barrier(100)

    def writer(i):
        barrier.wait()
        assert store.handle(WriteAddress(c, b"%d" % i)) == Ack()

    threads = [threading.Thread(target=writer, args=(i,)) for i in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    got = store.handle(ReadAddress(c, 0)).payloads
    assert sorted(got) == sorted(b"%d" % i for i in range(100))


def test_session_single_use(rng):
    store = make_store()
    c = create(store, rng, r=3)
    issued = store.handle(ReadAddress(c, 0))
    assert isinstance(answer(store, issued, 3), Messages)
    assert answer(store, issued, 3) == Error(wire.UNKNOWN_SESSION)


def test_failed_answer_also_consumes_session(rng):
    store = make_store()
    c = create(store, rng, r=3)
    issued = store.handle(ReadAddress(c, 0))
    assert answer(store, issued, 4) == Error(wire.ACCESS_DENIED)
    assert answer(store, issued, 3) == Error(wire.UNKNOWN_SESSION)


def test_answer_after_expiry(rng, clock):
    store = make_store(clock)
    c = create(store, rng, r=3)
    issued = store.handle(ReadAddress(c, 0))
    clock.advance(30.5)
    assert answer(store, issued, 3) == Error(wire.CHALLENGE_EXPIRED)
    issued = store.handle(ReadAddress(c, 0))
    clock.advance(31)
    assert store.sweep() == 1
    assert answer(store, issued, 3) == Error(wire.UNKNOWN_SESSION)


def test_challenge_bound_to_key_version(rng):
    store = make_store()
    c = create(store, rng, r=3, o=7)
    pending = store.handle(ReadAddress(c, 0))
    privileged(store, UpdateAddress(c, slow_pow(G, 3, P), 9, slow_pow(G, 7, P)), 7)
    # Same read key after the update, but the proof predates it.
    assert answer(store, pending, 3).code == wire.ACCESS_DENIED


def test_prune_and_delete(rng):
    store = make_store()
    c = create(store, rng, o=7, wild=("r", "w"))
    for payload in (b"a", b"b", b"c"):
        store.handle(WriteAddress(c, payload))
    assert privileged(store, PruneAddress(c, 2), 7) == Ack()
    assert store.handle(ReadAddress(c, 0)) == Messages((b"c",), 3)
    assert privileged(store, PruneAddress(c, 2), 6) == Error(wire.ACCESS_DENIED)
    assert privileged(store, DeleteAddress(c), 7) == Ack()
    never = "cd" * 16
    assert store.handle(ReadAddress(c, 0)) == store.handle(ReadAddress(never, 0)) == Error(wire.NO_SUCH_ADDRESS)


def test_snapshot_round_trip(rng):
    store = make_store()
    cs = [create(store, rng, wild=("r", "w")) for _ in range(3)]
    for i, c in enumerate(cs):
        for j in range(i + 1):
            store.handle(WriteAddress(c, bytes([i, j])))
    store.handle(ReadAddress(create(store, rng), 0))  # leaves an open session
    key, hello = hello_for(store, rng)
    store.handle(CreateAddress(hello))  # and a pending creation
    data = store.snapshot()
    restored = make_store().restore(data)
    assert restored.open_sessions() == 0 and restored.pending_creations() == 0
    for c in cs:
        assert restored.handle(ReadAddress(c, 0)) == store.handle(ReadAddress(c, 0))
    assert restored.snapshot() == data


def test_snapshot_has_only_records(rng):
    store = make_store()
    c = create(store, rng, r=3)
    issued = store.handle(ReadAddress(c, 0))
    assert issued.session_id.encode() not in store.snapshot()


def test_empty_snapshot():
    data = make_store().snapshot()
    assert make_store().restore(data).addresses() == []


@pytest.mark.parametrize("data", [b"", b"{", b"[]", b'{"format":"x"}',
                                  b'{"format":"concealed-store-v1","group":"test","addresses":[{"c":"zz"}]}'])
def test_corrupt_snapshot(data):
    with pytest.raises(RestoreError):
        make_store().restore(data)


def test_malformed_line_gets_error():
    store = make_store()
    reply = wire.decode(store.handle_line(b"READ nope 0\n"))
    assert reply.code == wire.MALFORMED
    assert wire.decode(store.handle_line(wire.encode(Ack()))).code == wire.MALFORMED


def test_local_connection_round_trip(rng):
    store = make_store()
    c = create(store, rng, wild=("r", "w"))
    conn = LocalConnection(store)
    assert conn.request(WriteAddress(c, b"z")) == Ack()
    assert conn.request(ReadAddress(c, 0)) == Messages((b"z",), 1)


def test_key_replacement_is_atomic(rng):
    """Snapshots taken while the owner flips between two key triples only ever
    show one triple or the other, and readers holding neither read key never
    get messages."""
    store = make_store()
    c = create(store, rng, r=3, w=5, o=7)
    triples = [tuple(slow_pow(G, x, P) for x in xs) for xs in ((3, 5, 7), (4, 6, 8))]
    owners = [7, 8]
    stop = threading.Event()
    seen = set()
    granted = []

    def owner():
        i = 0
        while not stop.is_set():
            reply = privileged(store, UpdateAddress(c, *triples[(i + 1) % 2]), owners[i % 2])
            assert reply == AddressCreated(c)
            i += 1

    def auditor():
        for _ in range(200):
            doc = store.snapshot().decode()
            keys = tuple(int(re.search('"%s":"([0-9a-f]+)"' % k, doc).group(1), 16)
                         for k in ("p_r", "p_w", "p_o"))
            seen.add(keys)

    def reader(secret):
        for _ in range(200):
            if isinstance(privileged(store, ReadAddress(c, 0), secret), Messages):
                granted.append(secret)

    workers = [threading.Thread(target=auditor), threading.Thread(target=reader, args=(6,)),
               threading.Thread(target=reader, args=(3,))]
    flipper = threading.Thread(target=owner)
    flipper.start()
    for w in workers:
        w.start()
    for w in workers:
        w.join()
    stop.set()
    flipper.join()
    assert seen <= set(triples)
    assert 6 not in granted


# -- exhaustive small model ----------------------------------------------------

SUBGROUP = sorted({slow_pow(G, k, P) for k in range(Q)})
NON_SUBGROUP = 5
C = "a6" * 16
INITIAL = {"r": slow_pow(G, 3, P), "w": slow_pow(G, 5, P), "o": slow_pow(G, 7, P)}
SNAPSHOT = (
    '{"addresses":[{"base":0,"c":"%s","messages":["6d30"],"p_o":"%x","p_r":"%x","p_w":"%x"}],'
    '"format":"concealed-store-v1","group":"test"}' % (C, INITIAL["o"], INITIAL["r"], INITIAL["w"])
).encode()

ALPHABET = (
    [("READ",), ("WRITE",),
     ("UPDATE", WILDCARD, slow_pow(G, 2, P), INITIAL["o"]),
     ("UPDATE", slow_pow(G, 4, P), slow_pow(G, 6, P), slow_pow(G, 8, P))]
    + [("ANSWER", v) for v in SUBGROUP + [NON_SUBGROUP]]
)


def brute_force_log(element):
    return next(x for x in range(Q) if slow_pow(G, x, P) == element)


class Model:
    """Reference semantics; decides grants by brute-force discrete log."""

    def __init__(self):
        self.keys = dict(INITIAL)
        self.messages = [b"m0"]
        self.version = 0
        self.last = None  # (sid, key, frame, version, c0, c1)
        self.used = set()
        self.granted = False

    def frame(self, letter):
        if letter[0] == "READ":
            return ReadAddress(C, 0)
        if letter[0] == "WRITE":
            return WriteAddress(C, b"w")
        if letter[0] == "UPDATE":
            return UpdateAddress(C, *letter[1:])
        sid = self.last[0] if self.last else "00" * 16
        return ChallengeAnswer(sid, letter[1])

    def execute(self, frame):
        if isinstance(frame, ReadAddress):
            return Messages(tuple(self.messages), len(self.messages))
        if isinstance(frame, WriteAddress):
            self.messages.append(frame.payload)
            return Ack()
        self.keys = {"r": frame.p_r, "w": frame.p_w, "o": frame.p_o}
        self.version += 1
        return AddressCreated(C)

    def expect(self, frame, reply):
        perm = {ReadAddress: "r", WriteAddress: "w", UpdateAddress: "o"}.get(type(frame))
        if perm is not None:
            key = self.keys[perm]
            if key is WILDCARD:
                return self.execute(frame)
            assert isinstance(reply, ChallengeIssued)
            self.last = (reply.session_id, key, frame, self.version, reply.c0, reply.c1)
            return reply
        if self.last is None or self.last[0] in self.used or frame.session_id != self.last[0]:
            return Error(wire.UNKNOWN_SESSION)
        sid, key, pending, version, c0, c1 = self.last
        self.used.add(sid)
        x = brute_force_log(key)
        shared = slow_pow(c0, x, P)
        winners = [m for m in SUBGROUP if shared * m % P == c1]
        assert len(winners) == 1
        if frame.value != winners[0]:
            return Error(wire.ACCESS_DENIED)
        if version != self.version:
            return Error("AccessDenied", "address keys changed")
        self.granted = True
        return self.execute(pending)


def test_small_model_exhaustive():
    checked = 0
    for length in range(1, 5):
        for seq in itertools.product(ALPHABET, repeat=length):
            store = AddressStore(TEST_GROUP, rng=random.Random(hash(seq) & 0xFFFF)).restore(SNAPSHOT)
            model = Model()
            for letter in seq:
                frame = model.frame(letter)
                reply = store.handle(frame)
                assert reply == model.expect(frame, reply), seq
                if not model.granted:
                    assert not isinstance(reply, Messages)
                    assert store.snapshot() == SNAPSHOT + b"\n"
            checked += 1
    assert checked == sum(len(ALPHABET) ** n for n in range(1, 5))
