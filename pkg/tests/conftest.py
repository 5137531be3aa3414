import random

import pytest

from concealed.group import TEST_GROUP


class ScriptedRng(random.Random):
    """Random source whose ``randrange`` answers come from a fixed script."""

    def __new__(cls, values, seed=0):
        return super().__new__(cls, seed)

    def __init__(self, values, seed=0):
        super().__init__(seed)
        self._values = list(values)

    def randrange(self, *args, **kwargs):
        if self._values:
            return self._values.pop(0)
        return super().randrange(*args, **kwargs)


def slow_pow(base, exponent, modulus):
    result = 1
    for _ in range(exponent):
        result = result * base % modulus
    return result


def slow_inverse(value, modulus):
    return next(y for y in range(1, modulus) if value * y % modulus == 1)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def params():
    return TEST_GROUP


class FakeClock:
    def __init__(self, now=1000.0):
        self.now = now

    def __call__(self):
        return self.now

    def advance(self, seconds):
        self.now += seconds


@pytest.fixture
def clock():
    return FakeClock()


class World:
    """An in-process store plus helpers to make clients and mixes against it."""

    def __init__(self, params=TEST_GROUP, seed=0, clock=None):
        import random as _random

        from concealed.store import AddressStore

        self.params = params
        self.rng = _random.Random(seed)
        kwargs = {"rng": _random.Random(seed + 1)}
        if clock is not None:
            kwargs["clock"] = clock
        self.store = AddressStore(params, **kwargs)
        self.clock = clock

    def engine(self, conn=None):
        from concealed.client import ClientEngine
        from concealed.store import LocalConnection

        conn = conn or LocalConnection(self.store)
        return ClientEngine(conn, self.params, self.store.public_key, rng=self.rng)

    def mix(self, name, n_inboxes=2, **config):
        from concealed.mix import MixConfig, MixNode

        kwargs = {"rng": self.rng}
        if self.clock is not None:
            kwargs["clock"] = self.clock
        node = MixNode(name, self.engine(), MixConfig(**config), **kwargs)
        node.register_inboxes(n_inboxes)
        return node

    def user(self, name):
        from concealed.client import Keyring

        ring = Keyring.generate(name, self.rng)
        engine = self.engine()
        ring.inbox = engine.create_concealed_address(read=True, write=False, own=True)
        return ring, engine


@pytest.fixture
def world():
    return World()


# -- acceptance summary -------------------------------------------------------------

ACCEPTANCE_RESULTS: dict[int, str] = {}


def record_criterion(number: int, title: str, passed: bool, detail: str) -> bool:
    line = f"{'PASS' if passed else 'FAIL'}  criterion {number:>2}: {title} | {detail}"
    ACCEPTANCE_RESULTS[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_RESULTS):
            terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
