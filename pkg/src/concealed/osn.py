"""Social-network features built only from concealed addresses.

Records stored at addresses are fixed-size items packed into fixed-size
containers, so every write looks the same to the store.  Three item kinds:

* plain   ``OSNP`` + padded JSON (deliberate publications such as a Name)
* keyed   ``OSNK`` + 4-byte key id + JSON sealed under that content key
* wrapped ``OSNW`` + JSON hybrid-sealed to one reader's public key

Items without a marker are ordinary routed messages (see envelope.seal_item)
and are opened by trial with the keys the reader holds.

A content key also yields the read secret of the addresses it protects
(``derive_secret``), so handing someone a key is enough to let them fetch
and decrypt what it covers.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from . import envelope, group
from .client import (
    AccessDenied,
    AddressSecrets,
    ClientEngine,
    Keyring,
    MixInfo,
    ServerError,
    canonical_json,
)
from .envelope import Destination

PLAIN = b"OSNP"
KEYED = b"OSNK"
WRAPPED = b"OSNW"
KEY_ID_BYTES = 4


class OsnError(Exception):
    pass


def derive_secret(params: group.GroupParams, key: bytes, purpose: str) -> int:
    """Address-key exponent derived from a content key, in [1, q-1]."""
    width = (params.order.bit_length() + 7) // 8 + 16
    raw = HKDF(algorithm=hashes.SHA256(), length=width, salt=None,
               info=b"concealed-osn-" + purpose.encode()).derive(key)
    return int.from_bytes(raw, "big") % (params.order - 1) + 1


def new_key_id(rng) -> str:
    return rng.randbytes(KEY_ID_BYTES).hex()


# -- record items ---------------------------------------------------------------

def _pad(data: bytes, size: int, rng) -> bytes:
    if len(data) + 4 > size:
        raise OsnError(f"record of {len(data)} bytes does not fit in one item")
    return envelope.LEN.pack(len(data)) + data + rng.randbytes(size - 4 - len(data))


def _unpad(data: bytes) -> bytes:
    (n,) = envelope.LEN.unpack_from(data)
    if n > len(data) - 4:
        raise OsnError("bad record length")
    return data[4:4 + n]


def plain_item(record: dict, rng, size: int = envelope.ITEM_SIZE) -> bytes:
    return PLAIN + _pad(canonical_json(record), size - len(PLAIN), rng)


def keyed_item(record: dict, key_id: str, key: bytes, rng, size: int = envelope.ITEM_SIZE) -> bytes:
    inner = size - len(KEYED) - KEY_ID_BYTES - group.SEAL_OVERHEAD
    return KEYED + bytes.fromhex(key_id) + group.seal(key, _pad(canonical_json(record), inner, rng), rng)


def wrapped_item(record: dict, public_key: bytes, rng, size: int = envelope.ITEM_SIZE) -> bytes:
    inner = size - len(WRAPPED) - group.HYBRID_OVERHEAD
    return WRAPPED + group.hybrid_seal(public_key, _pad(canonical_json(record), inner, rng), rng)


@dataclass
class Opened:
    record: dict | None
    key: bytes | None = None
    key_id: str | None = None


def open_record(item: bytes, keys: dict[str, bytes], identities=(), loose_keys=()) -> Opened:
    """Best-effort decode of one item; ``record`` is None if nothing opens it."""
    try:
        if item.startswith(PLAIN):
            return Opened(json.loads(_unpad(item[len(PLAIN):])))
        if item.startswith(KEYED):
            kid = item[4:4 + KEY_ID_BYTES].hex()
            key = keys.get(kid)
            if key is None:
                return Opened(None, key_id=kid)
            body = group.open_sealed(key, item[4 + KEY_ID_BYTES:])
            return Opened(json.loads(_unpad(body)), key, kid)
        if item.startswith(WRAPPED):
            for ident in identities:
                try:
                    return Opened(json.loads(_unpad(group.hybrid_open(ident, item[len(WRAPPED):]))))
                except group.CryptoError:
                    continue
            return Opened(None)
    except (group.CryptoError, OsnError, ValueError):
        return Opened(None)
    for key in list(loose_keys) + list(keys.values()) + list(identities):
        try:
            return Opened(json.loads(envelope.open_item(item, key)), key if isinstance(key, bytes) else None)
        except (group.CryptoError, envelope.EnvelopeError, ValueError):
            continue
    return Opened(None)


# -- profiles -------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileEntry:
    """``key=None`` publishes the value in the clear; otherwise it names a key group."""
    label: str
    value: str
    key: str | None = None


@dataclass
class ProfileView:
    fields: dict[str, str] = field(default_factory=dict)
    posts: dict[str, list] = field(default_factory=dict)
    opaque: int = 0
    keys: dict[str, bytes] = field(default_factory=dict)
    addresses: set = field(default_factory=set)


@dataclass
class GrantReceipt:
    contact: str
    key_ids: list[str]
    verified: bool

    @property
    def warning(self) -> str | None:
        if self.verified:
            return None
        return f"{self.contact}'s public key has not been verified"


@dataclass
class ChatChannel:
    c: str
    key: bytes
    generation: int
    owner: bool = False
    secrets: AddressSecrets | None = None
    members: list[str] = field(default_factory=list)
    old_keys: list[bytes] = field(default_factory=list)
    open_write: bool = False
    cursor: int = 0

    def read_secret(self, params) -> int:
        return derive_secret(params, self.key, "read")

    def write_secret(self, params) -> int:
        return 0 if self.open_write else derive_secret(params, self.key, "write")

    def to_json(self) -> dict:
        return {
            "c": self.c, "key": self.key.hex(), "generation": self.generation, "owner": self.owner,
            "secrets": self.secrets.to_json() if self.secrets else None, "members": self.members,
            "old_keys": [k.hex() for k in self.old_keys], "open_write": self.open_write,
            "cursor": self.cursor,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ChatChannel":
        return cls(doc["c"], bytes.fromhex(doc["key"]), doc["generation"], doc["owner"],
                   AddressSecrets.from_json(doc["secrets"]) if doc.get("secrets") else None,
                   list(doc["members"]), [bytes.fromhex(k) for k in doc["old_keys"]],
                   doc["open_write"], doc.get("cursor", 0))


@dataclass
class Section:
    name: str
    c: str
    key: bytes
    key_id: str
    admin_only: bool
    write_key: bytes | None  # None if this member may not write

    def to_json(self) -> dict:
        return {"name": self.name, "c": self.c, "key": self.key.hex(), "key_id": self.key_id,
                "admin_only": self.admin_only,
                "write_key": self.write_key.hex() if self.write_key else None}

    @classmethod
    def from_json(cls, doc: dict) -> "Section":
        wk = doc.get("write_key")
        return cls(doc["name"], doc["c"], bytes.fromhex(doc["key"]), doc["key_id"],
                   doc["admin_only"], bytes.fromhex(wk) if wk else None)


@dataclass
class Group:
    name: str
    root: str
    sections: dict[str, Section]
    admin: bool = False
    members: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"name": self.name, "root": self.root, "admin": self.admin, "members": self.members,
                "sections": {k: s.to_json() for k, s in sorted(self.sections.items())}}

    @classmethod
    def from_json(cls, doc: dict) -> "Group":
        return cls(doc["name"], doc["root"], {k: Section.from_json(v) for k, v in doc["sections"].items()},
                   doc.get("admin", False), list(doc.get("members", [])))


def roster_message(group_root: str, display: str) -> bytes:
    return canonical_json({"group": group_root, "member": display})


class OsnClient:
    """One user's OSN operations.  State lives in ``ring.extra`` so it persists with the keyring."""

    def __init__(self, ring: Keyring, engine: ClientEngine, mixes: list[MixInfo] = (),
                 hops: int | None = None):
        self.ring = ring
        self.engine = engine
        self.mixes = list(mixes)
        self.hops = hops
        self.params = engine.params
        self.rng = engine.rng
        extra = ring.extra
        extra.setdefault("profile", None)
        extra.setdefault("held_keys", {})
        extra.setdefault("profile_access", {})
        extra.setdefault("chats", {})
        extra.setdefault("groups", {})

    # -- plumbing ---------------------------------------------------------------

    def _write_items(self, c: str, items: list[bytes], secret: int | None) -> None:
        for container in envelope.plain_containers(items, self.rng):
            self.engine.write(c, container, secret)

    def _route(self, message: dict, dest: Destination, exclude: str | None = None) -> None:
        payload = canonical_json(message)
        if self.mixes:
            self.engine.deliver(payload, dest, self.mixes, self.hops, exclude_operator=exclude)
        else:
            self.engine.deliver(payload, dest, [], 0)

    def notify(self, contact: str, note: dict) -> None:
        """Send a note to a contact's inbox through the mixes."""
        self._route(note, self.ring.destination(contact), exclude=contact)

    def _read_items(self, c: str, secret: int | None, cursor: int = 0):
        reply = self.engine.read(c, secret, cursor)
        items = []
        for payload in reply.payloads:
            try:
                items.extend(envelope.unpack(payload))
            except envelope.EnvelopeError:
                continue
        return items, reply.next_cursor

    def _new_key(self) -> tuple[str, bytes]:
        return new_key_id(self.rng), group.new_content_key(self.rng)

    @property
    def held_keys(self) -> dict[str, bytes]:
        return {k: bytes.fromhex(v) for k, v in self.ring.extra["held_keys"].items()}

    def hold_key(self, key_id: str, key: bytes) -> None:
        self.ring.extra["held_keys"][key_id] = key.hex()

    def _create_protected(self, key: bytes) -> AddressSecrets:
        """Address readable with ``key``'s derived read secret; write/own stay with us."""
        s = self.engine.create_concealed_address()
        return self.engine.update_keys(s, read=derive_secret(self.params, key, "read"),
                                       write=s.w, own=s.o)

    # -- profile ----------------------------------------------------------------

    def publish_profile(self, entries: list[ProfileEntry], feeds: dict[str, str] = None) -> str:
        """Create the public root plus one protected address per private field.

        ``feeds`` maps a feed label to the key group protecting it; each feed is
        reached through one indirection address holding the posts address.
        """
        labels = [e.label for e in entries] + list(feeds or {})
        if len(labels) != len(set(labels)):
            raise OsnError("profile labels must be unique")
        root = self.engine.create_concealed_address(read=False)
        dir_kid, dir_key = self._new_key()
        directory = self._create_protected(dir_key)
        state = {
            "root": root.to_json(),
            "directory": directory.to_json(),
            "directory_key": [dir_kid, dir_key.hex()],
            "groups": {},     # key group -> current key id
            "keys": {},       # key id -> key hex
            "fields": {},     # label -> {"c", "w", "o", "group", "value"}
            "feeds": {},      # label -> {"hop": secrets, "posts": secrets, "group"}
            "grants": {},     # key group -> [contact]
        }
        self.hold_key(dir_kid, dir_key)
        items = []
        for entry in entries:
            if entry.key is None:
                items.append(plain_item({"kind": "value", "label": entry.label, "value": entry.value}, self.rng))
        items.append(plain_item({"kind": "value", "label": "Public key",
                                 "value": self.ring.public_key.hex()}, self.rng))

        def key_for(group_name):
            if group_name not in state["groups"]:
                kid, key = self._new_key()
                state["groups"][group_name] = kid
                state["keys"][kid] = key.hex()
                self.hold_key(kid, key)
            kid = state["groups"][group_name]
            return kid, bytes.fromhex(state["keys"][kid])

        for entry in entries:
            if entry.key is None:
                continue
            kid, key = key_for(entry.key)
            addr = self._create_protected(key)
            self._write_items(addr.c, [keyed_item({"kind": "value", "label": entry.label,
                                                   "value": entry.value}, kid, key, self.rng)], addr.w)
            state["fields"][entry.label] = {"secrets": addr.to_json(), "group": entry.key,
                                            "value": entry.value}
            items.append(keyed_item({"kind": "link", "label": entry.label, "address": addr.c}, kid, key, self.rng))
        for label, group_name in (feeds or {}).items():
            kid, key = key_for(group_name)
            posts = self.engine.create_concealed_address()
            hop = self._create_protected(key)
            self._write_items(hop.c, [keyed_item({"kind": "link", "label": label, "address": posts.c,
                                                  "read": f"{posts.r:x}"}, kid, key, self.rng)], hop.w)
            state["feeds"][label] = {"hop": hop.to_json(), "posts": posts.to_json(), "group": group_name}
            items.append(keyed_item({"kind": "link", "label": label, "address": hop.c}, kid, key, self.rng))
        items.append(keyed_item({"kind": "link", "label": "Keys", "address": directory.c,
                                 "directory": True}, dir_kid, dir_key, self.rng))
        self._write_items(root.c, items, root.w)
        self.ring.extra["profile"] = state
        return root.c

    def _profile(self) -> dict:
        state = self.ring.extra["profile"]
        if state is None:
            raise OsnError("no profile published")
        return state

    def key_id_of(self, group_name: str) -> str:
        return self._profile()["groups"][group_name]

    def grant_profile_access(self, contact: str, key_groups: list[str]) -> GrantReceipt:
        """Wrap the current key of each group for ``contact`` in the key directory."""
        state = self._profile()
        person = self.ring.contacts[contact]
        directory = AddressSecrets.from_json(state["directory"])
        items, granted = [], []
        for group_name in key_groups:
            kid = state["groups"][group_name]
            items.append(wrapped_item({"kind": "key", "key_id": kid, "key": state["keys"][kid]},
                                      person.public_key, self.rng))
            members = state["grants"].setdefault(group_name, [])
            if contact not in members:
                members.append(contact)
            granted.append(kid)
        self._write_items(directory.c, items, directory.w)
        first_time = not state.setdefault("directory_sent", {}).get(contact)
        if first_time and person.inbox:
            dir_kid, dir_key = state["directory_key"]
            root = AddressSecrets.from_json(state["root"]).c
            self.notify(contact, {"type": "profile-access", "root": root,
                                  "key_id": dir_kid, "key": dir_key})
            state["directory_sent"][contact] = True
        return GrantReceipt(contact, granted, person.verified)

    def rotate_field_key(self, group_name: str, revoke: list[str] = ()) -> str:
        """Move every field and feed of a key group to a fresh key; returns the new key id."""
        state = self._profile()
        old_kid = state["groups"][group_name]
        kid, key = self._new_key()
        state["groups"][group_name] = kid
        state["keys"][kid] = key.hex()
        self.hold_key(kid, key)
        remaining = [c for c in state["grants"].get(group_name, []) if c not in revoke]
        state["grants"][group_name] = remaining
        root = AddressSecrets.from_json(state["root"])
        read = derive_secret(self.params, key, "read")
        root_items = []
        for label, info in state["fields"].items():
            if info["group"] != group_name:
                continue
            s = AddressSecrets.from_json(info["secrets"])
            s = self.engine.update_keys(s, read=read, write=s.w, own=s.o)
            info["secrets"] = s.to_json()
            self._write_items(s.c, [keyed_item({"kind": "value", "label": label, "value": info["value"]},
                                               kid, key, self.rng)], s.w)
            root_items.append(keyed_item({"kind": "link", "label": label, "address": s.c}, kid, key, self.rng))
        for label, info in state["feeds"].items():
            if info["group"] != group_name:
                continue
            hop = AddressSecrets.from_json(info["hop"])
            posts = AddressSecrets.from_json(info["posts"])
            hop = self.engine.update_keys(hop, read=read, write=hop.w, own=hop.o)
            posts = self.engine.update_keys(posts, read=True, write=posts.w, own=posts.o)
            info["hop"], info["posts"] = hop.to_json(), posts.to_json()
            self._write_items(hop.c, [keyed_item({"kind": "link", "label": label, "address": posts.c,
                                                  "read": f"{posts.r:x}"}, kid, key, self.rng)], hop.w)
            root_items.append(keyed_item({"kind": "link", "label": label, "address": hop.c}, kid, key, self.rng))
        self._write_items(root.c, root_items, root.w)
        directory = AddressSecrets.from_json(state["directory"])
        wraps = [wrapped_item({"kind": "key", "key_id": kid, "key": key.hex()},
                              self.ring.contacts[c].public_key, self.rng) for c in remaining]
        if wraps:
            self._write_items(directory.c, wraps, directory.w)
        del state["keys"][old_kid]
        return kid

    def post_to_feed(self, label: str, content: str) -> None:
        """Owner post: sealed under the feed's current key, written with the write secret."""
        state = self._profile()
        info = state["feeds"][label]
        kid = state["groups"][info["group"]]
        key = bytes.fromhex(state["keys"][kid])
        posts = AddressSecrets.from_json(info["posts"])
        self._write_items(posts.c, [keyed_item({"kind": "post", "content": content}, kid, key, self.rng)], posts.w)

    def create_pinboard(self, label: str, group_name: str) -> str:
        """A feed whose posts address accepts writes from anyone."""
        state = self._profile()
        kid = state["groups"][group_name]
        key = bytes.fromhex(state["keys"][kid])
        posts = self.engine.create_concealed_address(write=False)
        hop = self._create_protected(key)
        self._write_items(hop.c, [keyed_item({"kind": "link", "label": label, "address": posts.c,
                                              "read": f"{posts.r:x}", "pinboard": True},
                                             kid, key, self.rng)], hop.w)
        state["feeds"][label] = {"hop": hop.to_json(), "posts": posts.to_json(), "group": group_name}
        root = AddressSecrets.from_json(state["root"])
        self._write_items(root.c, [keyed_item({"kind": "link", "label": label, "address": hop.c},
                                              kid, key, self.rng)], root.w)
        return posts.c

    def post_to_pinboard(self, address: str, content: str, key: bytes | None = None) -> None:
        """Anyone may post to a pinboard; routed through mixes when available."""
        record = {"kind": "post", "content": content}
        if key is not None:
            dest = Destination(address, content_key=key)
            self._route(record, dest)
        else:
            self.engine.send(address, envelope.pack([plain_item(record, self.rng)], envelope.ENVELOPE_SIZE, self.rng))

    def resolve_profile(self, root: str, keys: dict[str, bytes] | None = None,
                        use_identity: bool = True) -> ProfileView:
        """Decrypt everything reachable from ``root`` with the keys held, to a fixpoint."""
        held = dict(self.held_keys if keys is None else keys)
        identities = [self.ring.identity] if use_identity else []
        while True:
            view = self._traverse(root, held, identities)
            if set(view.keys) <= set(held):
                view.keys = held
                return view
            held.update(view.keys)

    def _traverse(self, root: str, held: dict[str, bytes], identities) -> ProfileView:
        view = ProfileView()
        queue = [(root, None, None, None)]  # address, read secret, label, key that led here
        seen = set()
        while queue:
            c, secret, label, via_key = queue.pop(0)
            # A rotated field is linked twice with different secrets; try each once.
            if (c, secret) in seen:
                continue
            seen.add((c, secret))
            view.addresses.add(c)
            try:
                items, _ = self._read_items(c, secret)
            except (AccessDenied, ServerError):
                view.opaque += 1
                continue
            loose = [via_key] if via_key else []
            for item in items:
                opened = open_record(item, held, identities, loose)
                rec = opened.record
                if rec is None:
                    view.opaque += 1
                    continue
                kind = rec.get("kind")
                key = opened.key or via_key
                if kind == "value":
                    view.fields[rec["label"]] = rec["value"]
                elif kind == "key":
                    view.keys[rec["key_id"]] = bytes.fromhex(rec["key"])
                elif kind == "post":
                    view.posts.setdefault(label or "", []).append(rec["content"])
                elif kind == "link":
                    if "read" in rec:
                        nxt = int(rec["read"], 16) or None
                    elif key is not None:
                        nxt = derive_secret(self.params, key, "read")
                    else:
                        nxt = None
                    queue.append((rec["address"], nxt, rec.get("label", label), key))
        return view

    # -- inbox ------------------------------------------------------------------

    def poll_inbox(self) -> list[dict]:
        """Read our inbox, apply control notes, return everything received."""
        inbox = self.ring.inbox
        cursor = self.ring.extra.get("inbox_cursor", 0)
        result = self.engine.receive(inbox.c, inbox.r, [self.ring.identity], cursor)
        self.ring.extra["inbox_cursor"] = result.cursor
        notes = []
        for raw in result.messages:
            try:
                note = json.loads(raw)
            except ValueError:
                continue
            self._apply(note)
            notes.append(note)
        return notes

    def _apply(self, note: dict) -> None:
        kind = note.get("type")
        if kind == "profile-access":
            self.hold_key(note["key_id"], bytes.fromhex(note["key"]))
            self.ring.extra["profile_access"][note["root"]] = note["key_id"]
        elif kind in ("chat-invite", "chat-rekey"):
            chats = self.ring.extra["chats"]
            current = chats.get(note["c"])
            key = bytes.fromhex(note["key"])
            if current is None:
                chat = ChatChannel(note["c"], key, note["generation"], open_write=note.get("open_write", False))
            else:
                chat = ChatChannel.from_json(current)
                if note["generation"] > chat.generation:
                    chat.old_keys.append(chat.key)
                    chat.key, chat.generation = key, note["generation"]
            chats[note["c"]] = chat.to_json()
        elif kind == "group-invite":
            self.ring.extra["groups"][note["root"]] = Group(
                note["name"], note["root"],
                {k: Section.from_json(v) for k, v in note["sections"].items()},
                admin=note.get("admin", False)).to_json()
            for s in note["sections"].values():
                self.hold_key(s["key_id"], bytes.fromhex(s["key"]))

    # -- chats ------------------------------------------------------------------

    def _require_verified(self, names, allow_unverified: bool) -> None:
        for name in names:
            if not allow_unverified and not self.ring.contacts[name].verified:
                raise OsnError(f"{name}'s public key is not verified")

    def create_chat(self, members: list[str], open_write: bool = False,
                    allow_unverified: bool = False) -> ChatChannel:
        """Create a chat address and send its keys to every member."""
        self._require_verified(members, allow_unverified)
        key = group.new_content_key(self.rng)
        s = self.engine.create_concealed_address()
        chat = ChatChannel(s.c, key, 1, owner=True, open_write=open_write, members=[])
        chat.secrets = self.engine.update_keys(s, read=chat.read_secret(self.params),
                                               write=chat.write_secret(self.params), own=s.o)
        for name in members:
            self._invite(chat, name)
            chat.members.append(name)
        self._save_chat(chat)
        return chat

    def _invite(self, chat: ChatChannel, name: str, kind: str = "chat-invite") -> None:
        self.notify(name, {"type": kind, "c": chat.c, "key": chat.key.hex(),
                           "generation": chat.generation, "open_write": chat.open_write})

    def _save_chat(self, chat: ChatChannel) -> None:
        self.ring.extra["chats"][chat.c] = chat.to_json()

    def chat(self, c: str) -> ChatChannel:
        return ChatChannel.from_json(self.ring.extra["chats"][c])

    def add_member(self, chat: ChatChannel, name: str) -> None:
        if name in chat.members:
            return
        self._require_verified([name], True)
        self._invite(chat, name)
        chat.members.append(name)
        self._save_chat(chat)

    def remove_member(self, chat: ChatChannel, name: str) -> None:
        """Fresh read/write keys and a new content key; remaining members get the new generation."""
        if not chat.owner or chat.secrets is None:
            raise OsnError("only the chat owner can remove members")
        chat.members = [m for m in chat.members if m != name]
        chat.old_keys.append(chat.key)
        chat.key = group.new_content_key(self.rng)
        chat.generation += 1
        chat.secrets = self.engine.update_keys(chat.secrets, read=chat.read_secret(self.params),
                                               write=chat.write_secret(self.params), own=chat.secrets.o)
        for member in chat.members:
            self._invite(chat, member, "chat-rekey")
        self._save_chat(chat)

    def send_chat(self, chat: ChatChannel, text: str, via_mixes: bool = False) -> None:
        record = {"kind": "chat", "generation": chat.generation, "text": text}
        dest = Destination(chat.c, content_key=chat.key)
        if via_mixes and chat.open_write:
            self._route(record, dest)
        else:
            item = envelope.seal_item(canonical_json(record), dest, self.rng)
            self.engine.write(chat.c, envelope.pack([item], envelope.ENVELOPE_SIZE, self.rng),
                              chat.write_secret(self.params))

    def read_chat(self, chat: ChatChannel, cursor: int = 0) -> tuple[list[dict], int]:
        result = self.engine.receive(chat.c, chat.read_secret(self.params),
                                     [chat.key] + chat.old_keys, cursor)
        return [json.loads(m) for m in result.messages], result.cursor

    # -- groups -----------------------------------------------------------------

    def create_group(self, name: str, admins: list[str], members: list[str],
                     sections: dict[str, bool], public_roster: bool = False,
                     allow_unverified: bool = False) -> Group:
        """``sections`` maps section name to admin_only.  The creator is an admin."""
        self._require_verified(admins + members, allow_unverified)
        root = self.engine.create_concealed_address(read=False)
        admin_write = group.new_content_key(self.rng)
        member_write = group.new_content_key(self.rng)
        built = {}
        for section_name, admin_only in sections.items():
            kid, key = self._new_key()
            wkey = admin_write if admin_only else member_write
            s = self.engine.create_concealed_address()
            s = self.engine.update_keys(s, read=derive_secret(self.params, key, "read"),
                                        write=derive_secret(self.params, wkey, "write"), own=s.o)
            built[section_name] = Section(section_name, s.c, key, kid, admin_only, wkey)
            self.hold_key(kid, key)
        if public_roster:
            roster = self.engine.create_concealed_address(read=False, write=False)
            built["Roster"] = Section("Roster", roster.c, b"\0" * 32, "00000000", False, None)
        items = [plain_item({"kind": "value", "label": "Group", "value": name}, self.rng)]
        for section in built.values():
            if section.name == "Roster":
                items.append(plain_item({"kind": "link", "label": "Roster", "address": section.c,
                                         "read": "0"}, self.rng))
            else:
                items.append(keyed_item({"kind": "link", "label": section.name, "address": section.c},
                                        section.key_id, section.key, self.rng))
        self._write_items(root.c, items, root.w)
        grp = Group(name, root.c, built, admin=True, members=list(admins) + list(members))
        for person in admins + members:
            is_admin = person in admins
            payload = {}
            for section in built.values():
                doc = section.to_json()
                if section.admin_only and not is_admin:
                    doc["write_key"] = None
                payload[section.name] = doc
            self.notify(person, {"type": "group-invite", "name": name, "root": root.c,
                                 "admin": is_admin, "sections": payload})
        self.ring.extra["groups"][root.c] = grp.to_json()
        return grp

    def group(self, root: str) -> Group:
        return Group.from_json(self.ring.extra["groups"][root])

    def post_to_section(self, grp: Group, section_name: str, content: str) -> None:
        section = grp.sections[section_name]
        secret = derive_secret(self.params, section.write_key, "write") if section.write_key else None
        item = keyed_item({"kind": "post", "content": content}, section.key_id, section.key, self.rng)
        self._write_items(section.c, [item], secret)

    def read_section(self, grp: Group, section_name: str) -> list[str]:
        section = grp.sections[section_name]
        items, _ = self._read_items(section.c, derive_secret(self.params, section.key, "read"))
        out = []
        for item in items:
            rec = open_record(item, {section.key_id: section.key}).record
            if rec is not None and rec.get("kind") == "post":
                out.append(rec["content"])
        return out

    def publish_roster_entry(self, grp: Group, display: str) -> None:
        """Publicly list ourselves (a name or profile address) with a signature."""
        roster = grp.sections.get("Roster")
        if roster is None:
            raise OsnError("group has no public roster")
        sig = self.ring.signing.sign(roster_message(grp.root, display))
        record = {"kind": "member", "member": display, "verify_key": self.ring.verify_key.hex(),
                  "signature": sig.hex()}
        self.engine.send(roster.c, envelope.pack([plain_item(record, self.rng)], envelope.ENVELOPE_SIZE, self.rng))

    def read_roster(self, grp_root: str, roster: str) -> list[tuple[str, bool]]:
        """Roster entries with a flag telling whether each signature checks out."""
        items, _ = self._read_items(roster, None)
        out = []
        for item in items:
            rec = open_record(item, {}).record
            if not rec or rec.get("kind") != "member":
                continue
            try:
                Ed25519PublicKey.from_public_bytes(bytes.fromhex(rec["verify_key"])).verify(
                    bytes.fromhex(rec["signature"]), roster_message(grp_root, rec["member"]))
                out.append((rec["member"], True))
            except (InvalidSignature, ValueError):
                out.append((rec["member"], False))
        return out
