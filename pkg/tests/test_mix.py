from collections import Counter

import pytest
from scipy import stats

from concealed import envelope, group, wire
from concealed.client import ServerError
from concealed.envelope import Destination
from concealed.mix import MixConfig

from conftest import FakeClock, World


def boxes(world, n):
    engine = world.engine()
    return engine, [engine.create_concealed_address(write=False) for _ in range(n)]


def test_register_inboxes(world):
    mix = world.mix("m", n_inboxes=3)
    ids = mix.directory_entry().inboxes
    assert len(set(ids)) == 3
    stranger = world.engine()
    for c in ids:
        stranger.write(c, b"x" * 4096)  # wildcard write, no proof
    with pytest.raises(ValueError):
        mix.register_inboxes(0)


def test_config_validation():
    with pytest.raises(ValueError):
        MixConfig(batch_size=1)
    with pytest.raises(ValueError):
        MixConfig(dedup_window=60, delete_delay=30)
    assert MixConfig(dedup_window=60).delete_delay == 60


def test_collect_counts_and_dedups(world):
    mix = world.mix("m", batch_size=8)
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    directory = [mix.directory_entry()]
    envs = [engine.build_onion(b"%d" % i, Destination(box.c, content_key=key), directory, 1)
            for i in range(3)]
    for first, env in envs:
        engine.send(first, env)
    engine.send(*envs[0])  # identical ciphertext again
    world.engine().send(directory[0].inboxes[0], b"\x00" * 4096)  # garbage
    assert mix.collect() == 3
    assert len(mix.pending) == 3
    assert mix.metrics["duplicates"] == 1 and mix.metrics["undecryptable"] == 1


def test_threshold_and_timeout():
    clock = FakeClock()
    world = World(clock=clock)
    mix = world.mix("m", batch_size=3, flush_timeout=2.0)
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    directory = [mix.directory_entry()]
    for i in range(2):
        engine.send(*engine.build_onion(b"%d" % i, Destination(box.c, content_key=key), directory, 1))
    mix.collect()
    assert not mix.ready() and mix.flush() == 0
    assert engine.read(box.c, box.r).payloads == ()
    clock.advance(2.0)
    assert mix.ready()
    assert mix.flush() == 1  # both merged into one container for the same address
    got = engine.receive(box.c, box.r, [key])
    assert sorted(got.messages) == [b"0", b"1"]


def test_merge_same_destination(world):
    mix = world.mix("m")
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    directory = [mix.directory_entry()]
    layers = []
    for msg in (b"a", b"b"):
        _, env = engine.build_onion(msg, Destination(box.c, content_key=key), directory, 1)
        layers += envelope.open_mix_container(mix.keypair, env)
    outputs = mix.process_batch(layers)
    assert len(outputs) == 1 and outputs[0][0] == box.c
    assert len(outputs[0][1]) == envelope.ENVELOPE_SIZE
    assert sorted(envelope.open_item(i, key) for i in envelope.unpack(outputs[0][1])) == [b"a", b"b"]


def test_overflow_splits(world):
    mix = world.mix("m")
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    directory = [mix.directory_entry()]
    layers = []
    for i in range(5):
        _, env = engine.build_onion(b"%d" % i, Destination(box.c, content_key=key), directory, 1)
        layers += envelope.open_mix_container(mix.keypair, env)
    outputs = mix.process_batch(layers)
    assert len(outputs) == 3 and {d for d, _ in outputs} == {box.c}
    assert all(len(p) == envelope.ENVELOPE_SIZE for _, p in outputs)
    items = [i for _, p in outputs for i in envelope.unpack(p)]
    assert sorted(envelope.open_item(i, key) for i in items) == [b"%d" % i for i in range(5)]


def test_shuffle_first_position_uniform(world):
    mix = world.mix("m", batch_size=8)
    engine, dests = boxes(world, 8)
    key = group.new_content_key(world.rng)
    directory = [mix.directory_entry()]
    layers = []
    for box in dests:
        _, env = engine.build_onion(b"x", Destination(box.c, content_key=key), directory, 1)
        layers += envelope.open_mix_container(mix.keypair, env)
    index = {box.c: i for i, box in enumerate(dests)}
    counts = Counter(index[mix.process_batch(layers)[0][0]] for _ in range(1000))
    assert stats.chisquare([counts[i] for i in range(8)]).pvalue > 0.001


def test_end_to_end_two_mixes(world):
    mixes = [world.mix(f"m{i}") for i in range(2)]
    directory = [m.directory_entry() for m in mixes]
    ring, receiver = world.user("bob")
    sender = world.engine()
    sender.deliver(b"hello bob", Destination(ring.inbox.c, public_key=ring.public_key), directory, 2)
    sizes = []
    world.store.observer = lambda event: sizes.append(event.get("size"))
    for _ in range(2):
        for m in mixes:
            m.collect()
            m.flush(force=True)
    got = receiver.receive(ring.inbox.c, ring.inbox.r, [ring.identity])
    assert got.messages == [b"hello bob"]
    assert sizes == [envelope.ENVELOPE_SIZE] * 2


def test_write_failure_retried(world, monkeypatch):
    mix = world.mix("m")
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    engine.send(*engine.build_onion(b"x", Destination(box.c, content_key=key), [mix.directory_entry()], 1))
    mix.collect()
    real_send = mix.engine.send
    calls = []

    def failing(dest, payload):
        calls.append(dest)
        raise ServerError(wire.TOO_LARGE)

    monkeypatch.setattr(mix.engine, "send", failing)
    assert mix.flush(force=True) == 0 and len(mix.outbox) == 1
    monkeypatch.setattr(mix.engine, "send", real_send)
    assert mix.flush() == 1 and not mix.outbox
    assert engine.receive(box.c, box.r, [key]).messages == [b"x"]


def test_deletion_waits_for_delay():
    clock = FakeClock()
    world = World(clock=clock)
    mix = world.mix("m", n_inboxes=1, dedup_window=600)
    inbox = mix.inboxes[0].secrets
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    first, env = engine.build_onion(b"x", Destination(box.c, content_key=key), [mix.directory_entry()], 1)
    engine.send(first, env)
    mix.collect()
    mix.flush(force=True)
    clock.advance(599)
    mix.prune()
    assert len(mix.engine.read(inbox.c, inbox.r).payloads) == 1
    clock.advance(1)
    mix.prune()
    assert mix.engine.read(inbox.c, inbox.r).payloads == ()
    # A replay after deletion but within the window would have been caught by dedup.
    engine.send(first, env)
    mix.collect()
    assert mix.metrics["duplicates"] == 1


def test_reregistration_retires_old_inboxes():
    clock = FakeClock()
    world = World(clock=clock)
    mix = world.mix("m", n_inboxes=2, dedup_window=60)
    old = list(mix.directory_entry().inboxes)
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    first, env = engine.build_onion(b"late", Destination(box.c, content_key=key), [mix.directory_entry()], 1)
    new = mix.register_inboxes(2)
    assert not set(new) & set(old)
    engine.send(first, env)  # sender used the stale directory
    mix.collect()
    mix.flush(force=True)
    assert engine.receive(box.c, box.r, [key]).messages == [b"late"]
    clock.advance(61)
    mix.prune()
    assert mix.retiring == [] and mix.metrics["retired"] == 2
    with pytest.raises(ServerError):
        engine.send(old[0], env)


def test_run_loop_forwards(world):
    import threading
    import time

    mix = world.mix("m", batch_size=2, flush_timeout=0.2, poll_interval=0.05)
    engine, (box,) = boxes(world, 1)
    key = group.new_content_key(world.rng)
    engine.send(*engine.build_onion(b"x", Destination(box.c, content_key=key), [mix.directory_entry()], 1))
    stop = threading.Event()
    t = threading.Thread(target=mix.run, args=(stop,))
    t.start()
    deadline = time.monotonic() + 5
    got = []
    reader = world.engine()
    while not got and time.monotonic() < deadline:
        time.sleep(0.05)
        got = reader.receive(box.c, box.r, [key]).messages
    stop.set()
    t.join()
    assert got == [b"x"]
