"""Line-oriented codec for client and server frames.

Every frame is one line of space-separated tokens terminated by ``\\n``.
The first token is the type tag.  Byte strings are lowercase base16 (``-``
for the empty string), group elements are minimal lowercase base16 and the
wildcard key is ``*``.  The grammar is in docs/wire.md; the encoding is
canonical, so ``decode`` rejects any line that ``encode`` would not produce.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Union

from .group import WILDCARD, AddressKey, InvalidKey, decode_element, decode_key, encode_element, encode_key

ADDRESS_HEX_LEN = 32
SESSION_HEX_LEN = 32


class ParseError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


# Error codes carried in ERROR frames.
NO_SUCH_ADDRESS = "NoSuchAddress"
CHALLENGE_EXPIRED = "ChallengeExpired"
UNKNOWN_SESSION = "UnknownSession"
ACCESS_DENIED = "AccessDenied"
TOO_LARGE = "TooLarge"
INVALID_KEY = "InvalidKey"
OWNER_REQUIRED = "OwnerRequired"
BAD_HELLO = "BadHello"
MALFORMED = "Malformed"


# -- client frames ------------------------------------------------------------

@dataclass(frozen=True)
class CreateAddress:
    hello: bytes


@dataclass(frozen=True)
class UpdateAddress:
    c: str
    p_r: AddressKey
    p_w: AddressKey
    p_o: AddressKey


@dataclass(frozen=True)
class ReadAddress:
    c: str
    cursor: int = 0


@dataclass(frozen=True)
class WriteAddress:
    c: str
    payload: bytes


@dataclass(frozen=True)
class ChallengeAnswer:
    session_id: str
    value: int


@dataclass(frozen=True)
class PruneAddress:
    """Drop messages below absolute index ``upto``; needs the owner proof."""
    c: str
    upto: int


@dataclass(frozen=True)
class DeleteAddress:
    c: str


# -- server frames ------------------------------------------------------------

@dataclass(frozen=True)
class AddressCreated:
    c: str


@dataclass(frozen=True)
class CreatedBlob:
    ciphertext: bytes


@dataclass(frozen=True)
class ChallengeIssued:
    session_id: str
    c0: int
    c1: int


@dataclass(frozen=True)
class Messages:
    payloads: tuple[bytes, ...]
    next_cursor: int


@dataclass(frozen=True)
class Ack:
    pass


@dataclass(frozen=True)
class Error:
    code: str
    text: str = ""


ClientFrame = Union[CreateAddress, UpdateAddress, ReadAddress, WriteAddress,
                    ChallengeAnswer, PruneAddress, DeleteAddress]
ServerFrame = Union[AddressCreated, CreatedBlob, ChallengeIssued, Messages, Ack, Error]

CLIENT_FRAMES = (CreateAddress, UpdateAddress, ReadAddress, WriteAddress,
                 ChallengeAnswer, PruneAddress, DeleteAddress)
SERVER_FRAMES = (AddressCreated, CreatedBlob, ChallengeIssued, Messages, Ack, Error)

_TAGS = {
    CreateAddress: "CREATE",
    UpdateAddress: "UPDATE",
    ReadAddress: "READ",
    WriteAddress: "WRITE",
    ChallengeAnswer: "ANSWER",
    PruneAddress: "PRUNE",
    DeleteAddress: "DELETE",
    AddressCreated: "CREATED",
    CreatedBlob: "BLOB",
    ChallengeIssued: "CHALLENGE",
    Messages: "MESSAGES",
    Ack: "ACK",
    Error: "ERROR",
}
_BY_TAG = {tag: cls for cls, tag in _TAGS.items()}

_HEX = re.compile(r"[0-9a-f]+")
_CODE = re.compile(r"[A-Za-z][A-Za-z0-9]*")


def is_address_id(text: str) -> bool:
    return len(text) == ADDRESS_HEX_LEN and bool(_HEX.fullmatch(text))


# -- encoding -----------------------------------------------------------------

def _bytes(data: bytes) -> str:
    return data.hex() if data else "-"


def _hexid(value: str, what: str) -> str:
    if len(value) != ADDRESS_HEX_LEN or not _HEX.fullmatch(value):
        raise ValueError(f"{what} must be {ADDRESS_HEX_LEN} lowercase hex chars")
    return value


def _uint(value: int) -> str:
    if value < 0:
        raise ValueError("counters are non-negative")
    return str(value)


def _text(value: str) -> str:
    if any(ord(ch) < 0x20 or ord(ch) == 0x7F for ch in value):
        raise ValueError("error text may not contain control characters")
    try:
        value.encode("utf-8")
    except UnicodeEncodeError:
        raise ValueError("error text must be encodable as UTF-8") from None
    return value


def encode(frame) -> bytes:
    tag = _TAGS.get(type(frame))
    if tag is None:
        raise TypeError(f"not a frame: {frame!r}")
    if isinstance(frame, CreateAddress):
        fields = [_bytes(frame.hello)]
    elif isinstance(frame, UpdateAddress):
        fields = [_hexid(frame.c, "address"), encode_key(frame.p_r),
                  encode_key(frame.p_w), encode_key(frame.p_o)]
    elif isinstance(frame, ReadAddress):
        fields = [_hexid(frame.c, "address"), _uint(frame.cursor)]
    elif isinstance(frame, WriteAddress):
        fields = [_hexid(frame.c, "address"), _bytes(frame.payload)]
    elif isinstance(frame, ChallengeAnswer):
        fields = [_hexid(frame.session_id, "session id"), encode_element(frame.value)]
    elif isinstance(frame, PruneAddress):
        fields = [_hexid(frame.c, "address"), _uint(frame.upto)]
    elif isinstance(frame, DeleteAddress):
        fields = [_hexid(frame.c, "address")]
    elif isinstance(frame, AddressCreated):
        fields = [_hexid(frame.c, "address")]
    elif isinstance(frame, CreatedBlob):
        fields = [_bytes(frame.ciphertext)]
    elif isinstance(frame, ChallengeIssued):
        fields = [_hexid(frame.session_id, "session id"),
                  encode_element(frame.c0), encode_element(frame.c1)]
    elif isinstance(frame, Messages):
        fields = [_uint(frame.next_cursor)] + [_bytes(p) for p in frame.payloads]
    elif isinstance(frame, Ack):
        fields = []
    else:  # Error
        if not _CODE.fullmatch(frame.code):
            raise ValueError(f"bad error code {frame.code!r}")
        fields = [frame.code] + ([_text(frame.text)] if frame.text else [])
    return (" ".join([tag, *fields]) + "\n").encode("utf-8")


# -- decoding -----------------------------------------------------------------

class _Tokens:
    def __init__(self, text: str, raw: bytes):
        self.text = text
        self.raw = raw
        self.pos = 0

    def offset(self, char_pos: int) -> int:
        return len(self.text[:char_pos].encode("utf-8"))

    def fail(self, message: str, char_pos: int | None = None):
        raise ParseError(message, self.offset(self.pos if char_pos is None else char_pos))

    def next(self, what: str) -> tuple[str, int]:
        if self.pos >= len(self.text):
            self.fail(f"missing {what}")
        if self.pos > 0:
            if self.text[self.pos] != " ":
                self.fail("expected a single space")
            self.pos += 1
        start = self.pos
        end = self.text.find(" ", start)
        if end == -1:
            end = len(self.text)
        token = self.text[start:end]
        if not token:
            self.fail(f"empty {what}", start)
        self.pos = end
        return token, start

    def rest(self) -> str:
        """Remainder of the line after one separating space (may contain spaces)."""
        if self.pos >= len(self.text):
            return ""
        if self.text[self.pos] != " ":
            self.fail("expected a single space")
        text = self.text[self.pos + 1:]
        if not text:
            self.fail("empty trailing text")
        self.pos = len(self.text)
        return text

    def done(self) -> bool:
        return self.pos >= len(self.text)


def _parse_bytes(tok: _Tokens, what: str) -> bytes:
    token, start = tok.next(what)
    if token == "-":
        return b""
    if len(token) % 2 or not _HEX.fullmatch(token):
        tok.fail(f"{what} is not lowercase hex", start)
    return bytes.fromhex(token)


def _parse_hexid(tok: _Tokens, what: str) -> str:
    token, start = tok.next(what)
    if len(token) != ADDRESS_HEX_LEN or not _HEX.fullmatch(token):
        tok.fail(f"{what} must be {ADDRESS_HEX_LEN} lowercase hex chars", start)
    return token


def _parse_uint(tok: _Tokens, what: str) -> int:
    token, start = tok.next(what)
    if not token.isascii() or not token.isdigit() or (len(token) > 1 and token[0] == "0"):
        tok.fail(f"{what} is not a canonical decimal", start)
    return int(token)


def _parse_element(tok: _Tokens, what: str) -> int:
    token, start = tok.next(what)
    try:
        return decode_element(token)
    except ValueError as exc:
        tok.fail(str(exc), start)


def _parse_key(tok: _Tokens, what: str) -> AddressKey:
    token, start = tok.next(what)
    try:
        return decode_key(token)
    except (ValueError, InvalidKey) as exc:
        tok.fail(str(exc), start)


def decode(line: bytes):
    """Parse one frame; a single trailing newline is accepted and ignored."""
    if isinstance(line, str):
        line = line.encode("utf-8")
    body = line[:-1] if line.endswith(b"\n") else line
    if not body:
        raise ParseError("empty frame", 0)
    bad = next((i for i, b in enumerate(body) if b in (0x0A, 0x0D)), None)
    if bad is not None:
        raise ParseError("embedded line break", bad)
    try:
        text = body.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError("invalid UTF-8", exc.start) from None
    tok = _Tokens(text, body)
    tag, _ = tok.next("type tag")
    cls = _BY_TAG.get(tag)
    if cls is None:
        raise ParseError(f"unknown frame type {tag!r}", 0)

    if cls is CreateAddress:
        frame = CreateAddress(_parse_bytes(tok, "hello"))
    elif cls is UpdateAddress:
        frame = UpdateAddress(_parse_hexid(tok, "address"), _parse_key(tok, "read key"),
                              _parse_key(tok, "write key"), _parse_key(tok, "owner key"))
    elif cls is ReadAddress:
        frame = ReadAddress(_parse_hexid(tok, "address"), _parse_uint(tok, "cursor"))
    elif cls is WriteAddress:
        frame = WriteAddress(_parse_hexid(tok, "address"), _parse_bytes(tok, "payload"))
    elif cls is ChallengeAnswer:
        frame = ChallengeAnswer(_parse_hexid(tok, "session id"), _parse_element(tok, "answer"))
    elif cls is PruneAddress:
        frame = PruneAddress(_parse_hexid(tok, "address"), _parse_uint(tok, "upto"))
    elif cls is DeleteAddress:
        frame = DeleteAddress(_parse_hexid(tok, "address"))
    elif cls is AddressCreated:
        frame = AddressCreated(_parse_hexid(tok, "address"))
    elif cls is CreatedBlob:
        frame = CreatedBlob(_parse_bytes(tok, "ciphertext"))
    elif cls is ChallengeIssued:
        frame = ChallengeIssued(_parse_hexid(tok, "session id"),
                                _parse_element(tok, "c0"), _parse_element(tok, "c1"))
    elif cls is Messages:
        cursor = _parse_uint(tok, "next cursor")
        payloads = []
        while not tok.done():
            payloads.append(_parse_bytes(tok, "payload"))
        frame = Messages(tuple(payloads), cursor)
    elif cls is Ack:
        frame = Ack()
    else:
        code, start = tok.next("error code")
        if not _CODE.fullmatch(code):
            tok.fail("bad error code", start)
        text_start = tok.pos + 1
        text = tok.rest()
        try:
            _text(text)
        except ValueError:
            tok.fail("control character in error text", text_start)
        frame = Error(code, text)

    if not tok.done():
        tok.fail("trailing data")
    return frame


def is_client_frame(frame) -> bool:
    return isinstance(frame, CLIENT_FRAMES)


def is_server_frame(frame) -> bool:
    return isinstance(frame, SERVER_FRAMES)


__all__ = [name for name in dir() if not name.startswith("_")] + ["WILDCARD"]
