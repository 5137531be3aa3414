"""Fixed-size envelopes, onion layers and the containers mixes exchange.

Every payload written to a mix inbox or a recipient inbox is a *container* of
exactly ``envelope_size`` bytes.  A container holds length-prefixed items
followed by random padding.  Containers addressed to a mix are additionally
hybrid-sealed to that mix, so neither the store nor anyone else can see how
many items they carry or how large those items are.  Containers delivered to
a recipient are plain; their items are fixed-size ciphertexts.

An onion layer for mix M is ``hybrid_seal(M, routing)`` where routing is::

    dest (16 raw bytes) | kind (1 byte) | [next mix key (32 bytes)] | inner

``kind`` 0 means ``inner`` is a final item for the recipient at ``dest``;
kind 1 means ``inner`` is the next layer and ``dest`` is an inbox of the mix
whose public key follows.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

from . import group
from .group import HYBRID_OVERHEAD, PUBLIC_KEY_SIZE, SEAL_OVERHEAD

ENVELOPE_SIZE = 4096
ITEM_SIZE = 2040
LEN = struct.Struct(">I")

KIND_FINAL = 0
KIND_RELAY = 1
FINAL_HEADER = 16 + 1
RELAY_HEADER = 16 + 1 + PUBLIC_KEY_SIZE


class EnvelopeError(ValueError):
    pass


def layer_size(hops: int, item_size: int = ITEM_SIZE) -> int:
    """Size of the outermost layer of an onion with ``hops`` mixes."""
    if hops == 0:
        return item_size
    return item_size + HYBRID_OVERHEAD + FINAL_HEADER + (hops - 1) * (HYBRID_OVERHEAD + RELAY_HEADER)


def max_hops(envelope_size: int = ENVELOPE_SIZE, item_size: int = ITEM_SIZE) -> int:
    room = envelope_size - HYBRID_OVERHEAD - 2 * LEN.size
    hops = 0
    while layer_size(hops + 1, item_size) <= room:
        hops += 1
    return hops


# -- items ---------------------------------------------------------------------

def _padded(message: bytes, size: int, rng) -> bytes:
    if len(message) + LEN.size > size:
        raise EnvelopeError(f"message of {len(message)} bytes exceeds the {size - LEN.size}-byte limit")
    return LEN.pack(len(message)) + message + rng.randbytes(size - LEN.size - len(message))


def _unpadded(data: bytes) -> bytes:
    if len(data) < LEN.size:
        raise EnvelopeError("item too short")
    (n,) = LEN.unpack_from(data)
    if n > len(data) - LEN.size:
        raise EnvelopeError("bad inner length")
    return data[LEN.size:LEN.size + n]


def max_message_size(item_size: int = ITEM_SIZE) -> int:
    """Largest message that fits in one item under either kind of key."""
    return item_size - HYBRID_OVERHEAD - LEN.size


@dataclass(frozen=True)
class Destination:
    """Where a message ends up: an address and the key its readers use.

    Exactly one of ``public_key`` (X25519, the recipient's identity) or
    ``content_key`` (symmetric, shared by everyone who reads the address).
    """
    address: str
    public_key: bytes | None = None
    content_key: bytes | None = None

    def __post_init__(self):
        if (self.public_key is None) == (self.content_key is None):
            raise ValueError("destination needs exactly one of public_key / content_key")


def seal_item(message: bytes, dest: Destination, rng=group.SYSTEM_RNG,
              item_size: int = ITEM_SIZE) -> bytes:
    if dest.public_key is not None:
        return group.hybrid_seal(dest.public_key, _padded(message, item_size - HYBRID_OVERHEAD, rng), rng)
    return group.seal(dest.content_key, _padded(message, item_size - SEAL_OVERHEAD, rng), rng)


def open_item(item: bytes, key) -> bytes:
    """Open an item with a content key (bytes) or an X25519 private key."""
    if isinstance(key, (bytes, bytearray)):
        return _unpadded(group.open_sealed(key, item))
    return _unpadded(group.hybrid_open(key, item))


# -- containers ----------------------------------------------------------------

def pack(items: list[bytes], size: int, rng) -> bytes:
    """Length-prefixed items, a zero terminator if it fits, random fill."""
    out = bytearray()
    for item in items:
        if not item:
            raise EnvelopeError("empty items are not allowed")
        out += LEN.pack(len(item)) + item
    if len(out) > size:
        raise EnvelopeError("items do not fit in one container")
    if len(out) + LEN.size <= size:
        out += LEN.pack(0)
    out += rng.randbytes(size - len(out))
    return bytes(out)


def unpack(data: bytes) -> list[bytes]:
    items = []
    pos = 0
    while pos + LEN.size <= len(data):
        (n,) = LEN.unpack_from(data, pos)
        if n == 0:
            break
        pos += LEN.size
        if pos + n > len(data):
            raise EnvelopeError("item runs past the container")
        items.append(data[pos:pos + n])
        pos += n
    return items


def fill(items: list[bytes], size: int) -> list[list[bytes]]:
    """Greedily group items, keeping order, into lists that each pack into ``size``."""
    groups: list[list[bytes]] = []
    used = size + 1
    for item in items:
        need = LEN.size + len(item)
        if need > size:
            raise EnvelopeError("item larger than a container")
        if used + need > size:
            groups.append([])
            used = 0
        groups[-1].append(item)
        used += need
    return groups


def plain_containers(items: list[bytes], rng, size: int = ENVELOPE_SIZE) -> list[bytes]:
    return [pack(chunk, size, rng) for chunk in fill(items, size)]


def mix_containers(items: list[bytes], mix_key: bytes, rng, size: int = ENVELOPE_SIZE) -> list[bytes]:
    inner = size - HYBRID_OVERHEAD
    return [group.hybrid_seal(mix_key, pack(chunk, inner, rng), rng) for chunk in fill(items, inner)]


def open_mix_container(secret, data: bytes) -> list[bytes]:
    return unpack(group.hybrid_open(secret, data))


# -- onion layers --------------------------------------------------------------

@dataclass(frozen=True)
class RoutedEnvelope:
    """One peeled layer: where to send ``message`` and, for relays, to whom it is sealed."""
    destination: str
    message: bytes
    next_key: bytes | None = None

    @property
    def is_final(self) -> bool:
        return self.next_key is None


def wrap_layer(routed: RoutedEnvelope, mix_key: bytes, rng) -> bytes:
    dest = bytes.fromhex(routed.destination)
    if len(dest) != 16:
        raise EnvelopeError("destination must be a 128-bit address id")
    if routed.next_key is None:
        body = dest + bytes([KIND_FINAL]) + routed.message
    else:
        body = dest + bytes([KIND_RELAY]) + routed.next_key + routed.message
    return group.hybrid_seal(mix_key, body, rng)


def peel_layer(secret, layer: bytes) -> RoutedEnvelope:
    body = group.hybrid_open(secret, layer)
    if len(body) < FINAL_HEADER:
        raise EnvelopeError("layer too short")
    dest, kind = body[:16].hex(), body[16]
    if kind == KIND_FINAL:
        return RoutedEnvelope(dest, body[FINAL_HEADER:])
    if kind == KIND_RELAY and len(body) >= RELAY_HEADER:
        return RoutedEnvelope(dest, body[RELAY_HEADER:], body[FINAL_HEADER:RELAY_HEADER])
    raise EnvelopeError("unknown layer kind")
