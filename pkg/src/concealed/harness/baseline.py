"""Plaintext reference OSN server, the positive control for the attacks.

It behaves like a conventional service that manages all keys and messages:
users log in by name, mailboxes are per user, and every frame carries sender,
recipient and object names in clear.
"""
from __future__ import annotations

import json
from collections import defaultdict

from .trace import Recorder


class BaselineStore:
    def __init__(self, recorder: Recorder):
        self.recorder = recorder
        self.objects: dict[str, list[str]] = defaultdict(list)
        self.groups: dict[str, list[str]] = {}

    def _log(self, endpoint: str, **frame) -> int:
        return self.recorder.record(endpoint, json.dumps(frame, sort_keys=True, separators=(",", ":")))

    def login(self, endpoint: str, user: str) -> None:
        self._log(endpoint, op="login", user=user)

    def create(self, endpoint: str, user: str, obj: str) -> None:
        self.objects.setdefault(obj, [])
        self._log(endpoint, op="create", user=user, obj=obj)

    def put_profile(self, endpoint: str, user: str, body: str) -> None:
        obj = f"profile:{user}"
        self.objects[obj].append(body)
        self._log(endpoint, op="profile-put", user=user, obj=obj, body=body)

    def read_profile(self, endpoint: str, user: str, owner: str) -> None:
        self._log(endpoint, op="read-profile", user=user, owner=owner, obj=f"profile:{owner}")

    def grant(self, endpoint: str, owner: str, to: str, key: str) -> None:
        obj = f"keys:{owner}"
        self.objects[obj].append(f"{to}:{key}")
        self._log(endpoint, op="grant", owner=owner, to=to, obj=obj, body=key)

    def send(self, endpoint: str, sender: str, to: str, body: str) -> None:
        obj = f"mbox:{to}"
        self.objects[obj].append(f"{sender}:{body}")
        self._log(endpoint, op="send", to=to, obj=obj, body=body, **{"from": sender})

    def post(self, endpoint: str, user: str, body: str) -> None:
        obj = f"feed:{user}"
        self.objects[obj].append(body)
        self._log(endpoint, op="post", user=user, obj=obj, body=body)

    def group_create(self, endpoint: str, owner: str, gid: str, members: list[str]) -> None:
        self.groups[gid] = list(members)
        self._log(endpoint, op="group-create", owner=owner, group=gid, members=members, obj=f"group:{gid}")
        for m in members:
            if m != owner:
                self._key_dist(gid, m)

    def group_send(self, endpoint: str, sender: str, gid: str, body: str) -> None:
        self.objects[f"group:{gid}"].append(f"{sender}:{body}")
        self._log(endpoint, op="group-send", group=gid, obj=f"group:{gid}", body=body, **{"from": sender})

    def group_remove(self, endpoint: str, owner: str, gid: str, user: str) -> None:
        self.groups[gid] = [m for m in self.groups[gid] if m != user]
        self._log(endpoint, op="group-remove", owner=owner, group=gid, user=user, obj=f"group:{gid}")
        for m in self.groups[gid]:
            if m != owner:
                self._key_dist(gid, m)

    def _key_dist(self, gid: str, to: str) -> None:
        # The server holds the group keys and pushes them itself.
        self.objects[f"mbox:{to}"].append(f"key:{gid}")
        self._log("server", op="key-dist", group=gid, to=to, obj=f"mbox:{to}", body=f"key:{gid}")

    def fetch(self, endpoint: str, user: str) -> None:
        self._log(endpoint, op="fetch", user=user, obj=f"mbox:{user}")
        for gid, members in sorted(self.groups.items()):
            if user in members:
                self._log(endpoint, op="fetch", user=user, obj=f"group:{gid}")

    def snapshot(self) -> bytes:
        doc = {"objects": dict(sorted(self.objects.items())), "groups": dict(sorted(self.groups.items()))}
        return json.dumps(doc, sort_keys=True).encode() + b"\n"
