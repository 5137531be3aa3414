"""Substring audit of store snapshots and traces for identifying plaintext."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass

from .. import envelope, wire
from ..osn import PLAIN, _unpad
from .scenario import ScenarioScript

# Labels a user publishes in clear on purpose; everything else must stay hidden.
PUBLIC_LABELS = frozenset({"Name"})


@dataclass(frozen=True)
class Finding:
    where: str
    kind: str       # name | edge | text
    needle: str


def _public_item(item: bytes) -> bool:
    if not item.startswith(PLAIN):
        return False
    try:
        record = json.loads(_unpad(item[len(PLAIN):]))
    except (ValueError, UnicodeDecodeError):
        return False
    return record.get("kind") == "value" and record.get("label") in PUBLIC_LABELS


def stored_bytes(snapshot: bytes) -> list[tuple[str, bytes]]:
    """(address, bytes) for every stored message, minus deliberately public items.

    Message bodies are hex in the snapshot, so they are decoded before
    scanning; a scan over the hex text would find nothing by construction.
    """
    doc = json.loads(snapshot)
    out = [("snapshot-metadata", json.dumps({k: v for k, v in doc.items() if k != "addresses"}).encode())]
    for entry in doc["addresses"]:
        meta = {k: v for k, v in entry.items() if k != "messages"}
        out.append((entry["c"], json.dumps(meta).encode()))
        for m in entry["messages"]:
            out.append((entry["c"], _without_public(bytes.fromhex(m))))
    return out


def needles(script: ScenarioScript) -> list[tuple[str, bytes]]:
    found = [("name", u.encode()) for u in script.users]
    for a, b in script.edges:
        found += [("edge", f"{a}{sep}{b}".encode()) for sep in (",", " ", "-", ":")]
    texts = {a.text for a in script.actions if a.text}
    texts |= set(script.locations.values())
    found += [("text", t.encode()) for t in sorted(texts)]
    return found


def _scan(chunks, script: ScenarioScript) -> list[Finding]:
    out = []
    for kind, needle in needles(script):
        # A name must not match as the prefix of a longer token (ada0 inside ada01).
        pattern = re.compile(re.escape(needle) + (rb"(?![0-9A-Za-z])" if kind == "name" else b""))
        for where, data in chunks:
            if pattern.search(data):
                out.append(Finding(where, kind, needle.decode()))
                break
    return out


def audit_snapshot(snapshot: bytes, script: ScenarioScript) -> list[Finding]:
    return _scan(stored_bytes(snapshot), script)


def _without_public(data: bytes) -> bytes:
    try:
        items = envelope.unpack(data)
    except envelope.EnvelopeError:
        return data
    if any(_public_item(i) for i in items):
        return b"".join(i for i in items if not _public_item(i))
    return data


def audit_trace(trace, script: ScenarioScript) -> list[Finding]:
    """Scan every frame; WRITE payloads are decoded from hex before scanning."""
    chunks = []
    for i, e in enumerate(trace.events):
        try:
            frame = wire.decode(e.frame.encode())
        except wire.ParseError:
            chunks.append((f"event {i}", e.frame.encode()))
            continue
        if isinstance(frame, wire.WriteAddress):
            chunks.append((f"event {i}", frame.c.encode() + b" " + _without_public(frame.payload)))
        else:
            chunks.append((f"event {i}", e.frame.encode()))
    return _scan(chunks, script)
