"""Server traces and the attacker's normalized view of them.

A trace is what a malicious store operator could log: for every request,
the time, the transport endpoint, the request line, a short reply summary and
the store-side effects.  ``accesses`` turns either kind of trace (concealed
wire frames or baseline JSON frames) into one ``Access`` per event, so the
attacks run identical code on both.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

from .. import wire
from ..store import LocalConnection


@dataclass(frozen=True)
class TraceEvent:
    time: float
    endpoint: str
    frame: str
    reply: str = ""
    deltas: tuple = ()

    def to_json(self) -> dict:
        return {"t": self.time, "ep": self.endpoint, "frame": self.frame, "reply": self.reply,
                "deltas": list(self.deltas)}


@dataclass
class ServerTrace:
    kind: str
    events: list[TraceEvent] = field(default_factory=list)

    def to_text(self) -> str:
        lines = [json.dumps({"trace": self.kind}, sort_keys=True)]
        lines += [json.dumps(e.to_json(), sort_keys=True, separators=(",", ":")) for e in self.events]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "ServerTrace":
        lines = text.splitlines()
        trace = cls(json.loads(lines[0])["trace"])
        for line in lines[1:]:
            d = json.loads(line)
            trace.events.append(TraceEvent(d["t"], d["ep"], d["frame"], d["reply"], tuple(d["deltas"])))
        return trace

    def __len__(self) -> int:
        return len(self.events)


class Recorder:
    """Single append point for a run; deltas reported while a request runs attach to it."""

    def __init__(self, kind: str, clock):
        self.trace = ServerTrace(kind)
        self.clock = clock
        self._deltas: list[str] = []

    def observe(self, event: dict) -> None:
        self._deltas.append(json.dumps(event, sort_keys=True, separators=(",", ":")))

    def record(self, endpoint: str, frame: str, reply: str = "") -> int:
        self.trace.events.append(TraceEvent(round(self.clock(), 6), endpoint, frame, reply,
                                            tuple(self._deltas)))
        self._deltas = []
        return len(self.trace.events) - 1

    def mark(self) -> int:
        return len(self.trace.events)


def _reply_summary(reply) -> str:
    if isinstance(reply, wire.Messages):
        sizes = ",".join(str(len(p)) for p in reply.payloads)
        return f"MESSAGES {reply.next_cursor} [{sizes}]"
    return wire.encode(reply).decode().rstrip("\n")


class RecordingConnection(LocalConnection):
    """In-process connection that logs each request from ``endpoint``."""

    def __init__(self, store, recorder: Recorder, endpoint: str):
        super().__init__(store)
        self.recorder = recorder
        self.endpoint = endpoint

    def request(self, frame):
        reply = super().request(frame)
        self.recorder.record(self.endpoint, wire.encode(frame).decode().rstrip("\n"), _reply_summary(reply))
        return reply


# -- normalized view ---------------------------------------------------------------

@dataclass(frozen=True)
class Access:
    index: int
    time: float
    endpoint: str
    op: str            # create | read | write | update | prune | delete | login | other
    obj: str = ""
    size: int = 0
    meta: dict = field(default_factory=dict, hash=False, compare=False)
    payload: bytes = field(default=b"", repr=False, hash=False, compare=False)


def _concealed_access(i: int, e: TraceEvent) -> Access:
    try:
        frame = wire.decode(e.frame.encode())
    except wire.ParseError:
        return Access(i, e.time, e.endpoint, "other")
    if isinstance(frame, wire.ReadAddress):
        return Access(i, e.time, e.endpoint, "read", frame.c)
    if isinstance(frame, wire.WriteAddress):
        return Access(i, e.time, e.endpoint, "write", frame.c, len(frame.payload), payload=frame.payload)
    if isinstance(frame, wire.UpdateAddress):
        return Access(i, e.time, e.endpoint, "update", frame.c)
    if isinstance(frame, wire.PruneAddress):
        return Access(i, e.time, e.endpoint, "prune", frame.c)
    if isinstance(frame, wire.DeleteAddress):
        return Access(i, e.time, e.endpoint, "delete", frame.c)
    if isinstance(frame, wire.ChallengeAnswer):
        for d in e.deltas:
            if json.loads(d).get("op") == "create":
                return Access(i, e.time, e.endpoint, "create", json.loads(d)["c"])
        return Access(i, e.time, e.endpoint, "other")
    return Access(i, e.time, e.endpoint, "other")


def _baseline_access(i: int, e: TraceEvent, names: dict) -> Access:
    d = json.loads(e.frame)
    op = d["op"]
    ep = lambda name: names.get(name, name)  # noqa: E731
    if op == "login":
        names[d["user"]] = e.endpoint
        return Access(i, e.time, e.endpoint, "login", meta={"op": op, "name": d["user"]})
    meta = {"op": op}
    for k in ("from", "to", "user", "owner"):
        if k in d:
            meta[k] = ep(d[k])
    if "group" in d:
        meta["group"] = d["group"]
    if "members" in d:
        meta["members"] = [ep(m) for m in d["members"]]
    kind = {"create": "create", "fetch": "read", "read-profile": "read", "group-create": "create",
            "group-remove": "update"}.get(op, "write")
    body = d.get("body", "")
    return Access(i, e.time, e.endpoint, kind, d.get("obj", ""), len(body.encode()), meta,
                  body.encode())


def accesses(trace: ServerTrace) -> list[Access]:
    out = []
    if trace.kind == "baseline":
        names: dict = {}
        for i, e in enumerate(trace.events):
            out.append(_baseline_access(i, e, names))
    else:
        for i, e in enumerate(trace.events):
            out.append(_concealed_access(i, e))
    return out
