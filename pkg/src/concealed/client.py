"""Client protocol engine: address lifecycle, proofs, onion routing and the keyring."""
from __future__ import annotations

import base64
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.scrypt import Scrypt
from cryptography.exceptions import InvalidTag

from . import envelope, group, wire
from .envelope import Destination
from .group import WILDCARD, Challenge, GroupParams
from .store import decode_creation_blob
from .wire import (
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

DEFAULT_MIN_HOPS = 2
DEFAULT_MAX_HOPS = 4


class ServerError(Exception):
    def __init__(self, code: str, text: str = ""):
        super().__init__(f"{code}: {text}" if text else code)
        self.code = code
        self.text = text


class AccessDenied(ServerError):
    pass


def _raise(reply) -> None:
    if isinstance(reply, Error):
        cls = AccessDenied if reply.code == wire.ACCESS_DENIED else ServerError
        raise cls(reply.code, reply.text)


@dataclass
class AddressSecrets:
    """Capabilities for one address.  0 means the key is the wildcard; None means not held."""
    c: str
    r: int | None = None
    w: int | None = None
    o: int | None = None

    def to_json(self) -> dict:
        return {"c": self.c, "r": self.r, "w": self.w, "o": self.o}

    @classmethod
    def from_json(cls, doc: dict) -> "AddressSecrets":
        return cls(doc["c"], doc.get("r"), doc.get("w"), doc.get("o"))


@dataclass(frozen=True)
class MixInfo:
    name: str
    public_key: bytes
    inboxes: tuple[str, ...]
    operator: str | None = None

    def to_json(self) -> dict:
        doc = {"name": self.name, "public_key": self.public_key.hex(), "inboxes": list(self.inboxes)}
        if self.operator:
            doc["operator"] = self.operator
        return doc

    @classmethod
    def from_json(cls, doc: dict) -> "MixInfo":
        return cls(doc["name"], bytes.fromhex(doc["public_key"]), tuple(doc["inboxes"]),
                   doc.get("operator"))


def canonical_json(doc) -> bytes:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=True).encode()


def save_directory(mixes: list[MixInfo], path) -> None:
    Path(path).write_bytes(canonical_json([m.to_json() for m in mixes]) + b"\n")


def load_directory(path) -> list[MixInfo]:
    return [MixInfo.from_json(d) for d in json.loads(Path(path).read_bytes())]


@dataclass
class ReceiveResult:
    messages: list[bytes]
    cursor: int
    skipped: int = 0


def _public(params: GroupParams, secret: int):
    return WILDCARD if secret == 0 else group.public_key(params, secret)


class ClientEngine:
    """One identity's view of the server.  Not thread-safe; serialize calls per identity."""

    def __init__(self, conn, params: GroupParams, server_public_key: bytes, rng=None):
        self.conn = conn
        self.params = params
        self.server_public_key = server_public_key
        self.rng = rng if rng is not None else group.SYSTEM_RNG

    # -- proofs ---------------------------------------------------------------

    def _answer(self, issued: ChallengeIssued, secret: int | None):
        if secret:
            value = group.solve_challenge(self.params, secret, Challenge(issued.c0, issued.c1))
        else:
            # Without the secret all we can do is guess.
            value = self.params.exp(self.rng.randrange(self.params.order))
        return self.conn.request(ChallengeAnswer(issued.session_id, value))

    def _privileged(self, frame, secret: int | None):
        reply = self.conn.request(frame)
        if isinstance(reply, ChallengeIssued):
            reply = self._answer(reply, secret)
        _raise(reply)
        return reply

    # -- address lifecycle ----------------------------------------------------

    def _new_secret(self, wanted: bool) -> int:
        return self.rng.randrange(1, self.params.order) if wanted else 0

    def create_concealed_address(self, read: bool = True, write: bool = True,
                                 own: bool = True) -> AddressSecrets:
        """Create an address; a False flag makes that key the wildcard."""
        session_key = group.new_content_key(self.rng)
        hello = group.hybrid_seal(self.server_public_key, session_key, self.rng)
        reply = self.conn.request(CreateAddress(hello))
        _raise(reply)
        if not isinstance(reply, CreatedBlob):
            raise ServerError(wire.MALFORMED, f"unexpected reply {reply!r}")
        c, _r, _w, o = decode_creation_blob(group.open_sealed(session_key, reply.ciphertext))
        secrets = AddressSecrets(c, self._new_secret(read), self._new_secret(write), self._new_secret(own))
        self._install(c, o, secrets)
        return secrets

    def _install(self, c: str, owner_secret: int, new: AddressSecrets) -> None:
        frame = UpdateAddress(c, _public(self.params, new.r), _public(self.params, new.w),
                              _public(self.params, new.o))
        reply = self._privileged(frame, owner_secret)
        if reply != AddressCreated(c):
            raise ServerError(wire.MALFORMED, f"unexpected reply {reply!r}")

    def update_keys(self, secrets: AddressSecrets, read: bool | int = True,
                    write: bool | int = True, own: bool | int = True) -> AddressSecrets:
        """Install fresh keys on an owned address.

        Each argument is True (fresh secret), False (wildcard) or an explicit
        secret exponent to keep.
        """
        def pick(value):
            if value is True:
                return self._new_secret(True)
            if value is False:
                return 0
            return int(value)

        new = AddressSecrets(secrets.c, pick(read), pick(write), pick(own))
        self._install(secrets.c, secrets.o, new)
        return new

    def read(self, c: str, secret: int | None, cursor: int = 0) -> Messages:
        return self._privileged(ReadAddress(c, cursor), secret)

    def write(self, c: str, payload: bytes, secret: int | None = None) -> None:
        self._privileged(WriteAddress(c, payload), secret)

    def prune(self, c: str, owner_secret: int, upto: int) -> None:
        self._privileged(PruneAddress(c, upto), owner_secret)

    def delete(self, c: str, owner_secret: int) -> None:
        self._privileged(DeleteAddress(c), owner_secret)

    # -- routing --------------------------------------------------------------

    def choose_hops(self, available: int, low: int = DEFAULT_MIN_HOPS,
                    high: int = DEFAULT_MAX_HOPS) -> int:
        high = min(high, available)
        low = min(low, high)
        return self.rng.randint(low, high)

    def choose_route(self, pool: list[MixInfo], hops: int) -> list[tuple[MixInfo, str]]:
        """Mixes in the order they are appended (without replacement), each with an inbox."""
        pool = list(pool)
        route = []
        for _ in range(hops):
            mix = pool.pop(self.rng.randrange(len(pool)))
            route.append((mix, mix.inboxes[self.rng.randrange(len(mix.inboxes))]))
        return route

    def build_onion(self, message: bytes, dest: Destination, mixes: list[MixInfo],
                    hops: int | None = None, exclude_operator: str | None = None,
                    envelope_size: int = envelope.ENVELOPE_SIZE,
                    item_size: int = envelope.ITEM_SIZE) -> tuple[str, bytes]:
        """Wrap ``message`` for ``dest`` in ``hops`` layers; returns (first inbox, envelope).

        The loop mirrors the route construction: seal for the recipient,
        then repeatedly pick an unused mix, wrap {message, last destination}
        for it and make it the new last destination.  The last mix picked is
        the first hop.
        """
        pool = [m for m in mixes if exclude_operator is None or m.operator != exclude_operator]
        if hops is None:
            hops = self.choose_hops(len(pool))
        if hops < 0 or hops > len(pool):
            raise ValueError(f"need {hops} mixes, only {len(pool)} usable")
        if hops > envelope.max_hops(envelope_size, item_size):
            raise ValueError("path too long for the envelope size")
        inner = envelope.seal_item(message, dest, self.rng, item_size)
        last_address, last_key = dest.address, None
        for mix, inbox in self.choose_route(pool, hops):
            routed = envelope.RoutedEnvelope(last_address, inner, last_key)
            inner = envelope.wrap_layer(routed, mix.public_key, self.rng)
            last_address, last_key = inbox, mix.public_key
        if last_key is None:
            return last_address, envelope.pack([inner], envelope_size, self.rng)
        return last_address, envelope.mix_containers([inner], last_key, self.rng, envelope_size)[0]

    def send(self, first_hop: str, payload: bytes) -> None:
        reply = self.conn.request(WriteAddress(first_hop, payload))
        _raise(reply)

    def deliver(self, message: bytes, dest: Destination, mixes: list[MixInfo],
                hops: int | None = None, exclude_operator: str | None = None) -> None:
        self.send(*self.build_onion(message, dest, mixes, hops, exclude_operator))

    def receive(self, c: str, secret: int | None, keys, cursor: int = 0) -> ReceiveResult:
        """Read from ``cursor``, split containers and open every item with any of ``keys``."""
        if not isinstance(keys, (list, tuple)):
            keys = [keys]
        reply = self.read(c, secret, cursor)
        out, skipped = [], 0
        for payload in reply.payloads:
            try:
                items = envelope.unpack(payload)
            except envelope.EnvelopeError:
                skipped += 1
                continue
            for item in items:
                for key in keys:
                    try:
                        out.append(envelope.open_item(item, key))
                        break
                    except (group.CryptoError, envelope.EnvelopeError):
                        continue
                else:
                    skipped += 1
        return ReceiveResult(out, reply.next_cursor, skipped)

    # -- ownership ------------------------------------------------------------

    def transfer_ownership(self, secrets: AddressSecrets, new_owner: Destination,
                           mixes: list[MixInfo], hops: int | None = None) -> None:
        """Send the owner secret of ``secrets.c`` to ``new_owner`` through the mixes."""
        note = canonical_json({"type": "ownership", "c": secrets.c, "o": secrets.o})
        self.deliver(note, new_owner, mixes, hops)

    def claim_ownership(self, note: bytes) -> AddressSecrets:
        """Rekey an address received via :meth:`transfer_ownership`, revoking the sender."""
        doc = json.loads(note)
        if doc.get("type") != "ownership":
            raise ValueError("not an ownership note")
        return self.update_keys(AddressSecrets(doc["c"], o=doc["o"]))


# -- keyring ---------------------------------------------------------------------

KEYRING_FORMAT = "concealed-keyring-v1"


class KeyringError(Exception):
    pass


@dataclass
class Contact:
    name: str
    public_key: bytes
    inbox: str | None = None
    verify_key: bytes | None = None
    profile: str | None = None
    verified: bool = False

    @property
    def key_id(self) -> str:
        return group.key_id_for(self.public_key)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "public_key": self.public_key.hex(),
            "inbox": self.inbox,
            "verify_key": self.verify_key.hex() if self.verify_key else None,
            "profile": self.profile,
            "verified": self.verified,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Contact":
        vk = doc.get("verify_key")
        return cls(doc["name"], bytes.fromhex(doc["public_key"]), doc.get("inbox"),
                   bytes.fromhex(vk) if vk else None, doc.get("profile"), bool(doc.get("verified")))


@dataclass
class Keyring:
    name: str
    identity: object  # X25519PrivateKey
    signing: Ed25519PrivateKey
    inbox: AddressSecrets | None = None
    contacts: dict[str, Contact] = field(default_factory=dict)
    addresses: dict[str, AddressSecrets] = field(default_factory=dict)
    content_keys: dict[str, bytes] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @classmethod
    def generate(cls, name: str, rng=None) -> "Keyring":
        rng = rng if rng is not None else group.SYSTEM_RNG
        signing = Ed25519PrivateKey.from_private_bytes(rng.randbytes(32))
        return cls(name, group.generate_keypair(rng), signing)

    @property
    def public_key(self) -> bytes:
        return group.public_bytes(self.identity)

    @property
    def key_id(self) -> str:
        return group.key_id_for(self.public_key)

    @property
    def verify_key(self) -> bytes:
        return self.signing.public_key().public_bytes_raw()

    def add_contact(self, contact: Contact) -> Contact:
        existing = self.contacts.get(contact.name)
        if existing is not None and existing.public_key != contact.public_key:
            contact.verified = False
        elif existing is not None:
            contact.verified = existing.verified
        if contact.key_id == self.key_id:
            raise KeyringError("contact key collides with own key id")
        self.contacts[contact.name] = contact
        return contact

    def destination(self, name: str) -> Destination:
        contact = self.contacts[name]
        if contact.inbox is None:
            raise KeyringError(f"no inbox known for {name}")
        return Destination(contact.inbox, public_key=contact.public_key)

    # -- persistence ------------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "format": KEYRING_FORMAT,
            "name": self.name,
            "identity": group.private_bytes(self.identity).hex(),
            "signing": self.signing.private_bytes_raw().hex(),
            "inbox": self.inbox.to_json() if self.inbox else None,
            "contacts": [c.to_json() for c in sorted(self.contacts.values(), key=lambda c: c.name)],
            "addresses": {k: v.to_json() for k, v in sorted(self.addresses.items())},
            "content_keys": {k: v.hex() for k, v in sorted(self.content_keys.items())},
            "extra": self.extra,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "Keyring":
        if doc.get("format") != KEYRING_FORMAT:
            raise KeyringError("not a keyring")
        ring = cls(doc["name"], group.load_private(bytes.fromhex(doc["identity"])),
                   Ed25519PrivateKey.from_private_bytes(bytes.fromhex(doc["signing"])))
        ring.inbox = AddressSecrets.from_json(doc["inbox"]) if doc.get("inbox") else None
        ring.contacts = {c["name"]: Contact.from_json(c) for c in doc.get("contacts", [])}
        ring.addresses = {k: AddressSecrets.from_json(v) for k, v in doc.get("addresses", {}).items()}
        ring.content_keys = {k: bytes.fromhex(v) for k, v in doc.get("content_keys", {}).items()}
        ring.extra = doc.get("extra", {})
        return ring

    def save(self, path, passphrase: str, rng=None) -> None:
        rng = rng if rng is not None else group.SYSTEM_RNG
        salt = rng.randbytes(16)
        nonce = rng.randbytes(group.NONCE_SIZE)
        key = _passphrase_key(passphrase, salt)
        body = AESGCM(key).encrypt(nonce, canonical_json(self.to_json()), KEYRING_FORMAT.encode())
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_suffix(path.suffix + ".tmp")
        tmp.write_bytes(KEYRING_FORMAT.encode() + b"\n" + salt + nonce + body)
        os.chmod(tmp, 0o600)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path, passphrase: str) -> "Keyring":
        data = Path(path).read_bytes()
        header, _, rest = data.partition(b"\n")
        if header != KEYRING_FORMAT.encode() or len(rest) < 16 + group.NONCE_SIZE:
            raise KeyringError("not a keyring file")
        salt, nonce, body = rest[:16], rest[16:16 + group.NONCE_SIZE], rest[16 + group.NONCE_SIZE:]
        try:
            plain = AESGCM(_passphrase_key(passphrase, salt)).decrypt(nonce, body, header)
        except InvalidTag:
            raise KeyringError("wrong passphrase or corrupted keyring") from None
        return cls.from_json(json.loads(plain))


def _passphrase_key(passphrase: str, salt: bytes) -> bytes:
    return Scrypt(salt=salt, length=32, n=2**14, r=8, p=1).derive(passphrase.encode())


# -- verification and contact exchange --------------------------------------------

def key_view(ring: Keyring, contact_name: str) -> list[tuple[str, bytes]]:
    """The key set one side reads aloud: its own key plus the contact's key as stored."""
    contact = ring.contacts[contact_name]
    return [(ring.key_id, ring.public_key), (contact.key_id, contact.public_key)]


def verify_contact(ring: Keyring, contact_name: str, their_keys: list[tuple[str, bytes]]) -> bool:
    """Compare fingerprints of both views of the key set; marks the contact verified on match."""
    mine = key_view(ring, contact_name)
    if not {k for k, _ in mine} & {k for k, _ in their_keys}:
        raise KeyringError("the two key sets share no key id; nothing to compare")
    ok = group.fingerprint(mine) == group.fingerprint(their_keys)
    ring.contacts[contact_name].verified = ok
    return ok


BUNDLE_PREFIX = "COSN1:"


def contact_bundle(ring: Keyring, profile: str | None = None) -> bytes:
    """Canonical out-of-band bundle: name, keys and the inbox address."""
    return canonical_json({
        "type": "contact",
        "name": ring.name,
        "public_key": ring.public_key.hex(),
        "verify_key": ring.verify_key.hex(),
        "inbox": ring.inbox.c if ring.inbox else None,
        "profile": profile,
    })


def parse_bundle(data: bytes | str) -> Contact:
    if isinstance(data, str):
        data = bundle_from_qr(data) if data.startswith(BUNDLE_PREFIX) else data.encode()
    doc = json.loads(data)
    if doc.get("type") != "contact":
        raise KeyringError("not a contact bundle")
    group.load_public(bytes.fromhex(doc["public_key"]))
    vk = doc.get("verify_key")
    return Contact(doc["name"], bytes.fromhex(doc["public_key"]), doc.get("inbox"),
                   bytes.fromhex(vk) if vk else None, doc.get("profile"))


def bundle_to_qr(bundle: bytes) -> str:
    return BUNDLE_PREFIX + base64.b32encode(bundle).decode().rstrip("=")


def bundle_from_qr(text: str) -> bytes:
    if not text.startswith(BUNDLE_PREFIX):
        raise KeyringError("not a contact QR payload")
    body = text[len(BUNDLE_PREFIX):]
    return base64.b32decode(body + "=" * (-len(body) % 8))
