"""Seeded scenario scripts: users, contact graph, mixes and a timed action list."""
from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field

FIRST_NAMES = [
    "ada", "bruno", "chiara", "dmitri", "elif", "farid", "greta", "hiro", "ines", "jonas",
    "kemal", "lena", "mateo", "nadia", "oskar", "priya", "quentin", "rosa", "sven", "tamar",
    "ugo", "vera", "wen", "ximena", "yusuf", "zofia",
]
CITIES = ["Lisbon", "Tartu", "Osaka", "Quito", "Accra", "Perth", "Leeds", "Hanoi", "Lyon", "Cusco"]
WORDS = (
    "apple river stone cloud lantern meadow copper harbor violet thunder pepper candle orbit "
    "willow saddle marble falcon pickle garden velvet signal canyon biscuit meteor ribbon"
).split()

ACTION_KINDS = ("publish", "grant", "group-create", "dm", "post", "group-send", "group-remove")


@dataclass
class Action:
    time: float
    kind: str
    actor: str
    targets: list[str] = field(default_factory=list)
    text: str = ""
    media: bool = False
    group: str = ""
    removed: str = ""


@dataclass
class GroupSpec:
    gid: str
    owner: str
    members: list[str]  # includes the owner


@dataclass
class ScenarioScript:
    seed: int
    users: list[str]
    endpoints: dict[str, str]
    locations: dict[str, str]
    edges: list[list[str]]
    mixes: int
    groups: list[GroupSpec]
    actions: list[Action]
    rounds: int = 0

    def contacts(self, user: str) -> list[str]:
        out = set()
        for a, b in self.edges:
            if a == user:
                out.add(b)
            elif b == user:
                out.add(a)
        return sorted(out)

    def degree(self, user: str) -> int:
        return len(self.contacts(user))

    def messages(self) -> list[Action]:
        return [a for a in self.actions if a.kind == "dm"]

    def to_json(self) -> str:
        doc = asdict(self)
        doc["format"] = "concealed-scenario-v1"
        return json.dumps(doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "ScenarioScript":
        doc = json.loads(text)
        if doc.pop("format", None) != "concealed-scenario-v1":
            raise ValueError("not a scenario file")
        doc["groups"] = [GroupSpec(**g) for g in doc["groups"]]
        doc["actions"] = [Action(**a) for a in doc["actions"]]
        return cls(**doc)


def empty_script(seed: int = 0) -> ScenarioScript:
    return ScenarioScript(seed, [], {}, {}, [], 0, [], [])


def _text(rng: random.Random, media: bool, tag: str) -> str:
    if media:
        # Stand-in for an attachment: long opaque body.
        body = rng.randbytes(rng.randint(350, 800)).hex()
        return f"{tag} media:{body}"
    n = rng.randint(3, 18)
    return f"{tag} " + " ".join(rng.choice(WORDS) for _ in range(n))


def generate(seed: int, n_users: int = 20, n_mixes: int = 2, rounds: int = 12,
             n_groups: int = 3, p_dm: float = 0.5, p_post: float = 0.15,
             p_media: float = 0.3) -> ScenarioScript:
    """Reproducible scenario; every random choice comes from ``Random(seed)``."""
    rng = random.Random(seed)
    users = [f"{FIRST_NAMES[i % len(FIRST_NAMES)]}{i:02d}" for i in range(n_users)]
    endpoints = {u: f"10.0.0.{i + 1}" for i, u in enumerate(users)}
    locations = {endpoints[u]: rng.choice(CITIES) for u in users}

    # Heterogeneous degrees: edge probability grows with both ends' sociability.
    social = {u: rng.uniform(0.1, 0.8) for u in users}
    edges = set()
    for a, b in ((a, b) for i, a in enumerate(users) for b in users[i + 1:]):
        if rng.random() < social[a] * social[b]:
            edges.add((a, b))
    for u in users:
        if n_users > 1 and not any(u in e for e in edges):
            v = rng.choice([x for x in users if x != u])
            edges.add(tuple(sorted((u, v))))

    groups = []
    for g in range(n_groups if n_users >= 4 else 0):
        members = rng.sample(users, rng.randint(3, min(5, n_users)))
        groups.append(GroupSpec(f"g{g}", members[0], members))
        for a in members:
            for b in members:
                if a < b:
                    edges.add((a, b))
    edge_list = sorted([list(e) for e in edges])
    script = ScenarioScript(seed, users, endpoints, locations, edge_list, n_mixes, groups, [], rounds)

    actions: list[Action] = []
    t = 0.0
    for u in users:
        t += 0.01
        actions.append(Action(round(t, 4), "publish", u, text=f"{u} birthday {rng.randint(1, 28)}/{rng.randint(1, 12)}"))
    for u in users:
        for v in script.contacts(u):
            t += 0.001
            actions.append(Action(round(t, 4), "grant", u, [v]))
    for g in groups:
        t += 0.01
        actions.append(Action(round(t, 4), "group-create", g.owner, list(g.members[1:]), group=g.gid))

    counter = 0
    # Up to two groups lose one member each, part-way through.
    removals = {g.gid: rng.randint(2, max(2, rounds - 1)) for g in groups[:2]}
    members_now = {g.gid: list(g.members) for g in groups}
    for r in range(1, rounds + 1):
        todo = []
        for u in users:
            contacts = script.contacts(u)
            if contacts and rng.random() < p_dm:
                media = rng.random() < p_media
                counter += 1
                todo.append(Action(0, "dm", u, [rng.choice(contacts)], _text(rng, media, f"m{seed}-{counter}"), media))
            if rng.random() < p_post:
                counter += 1
                todo.append(Action(0, "post", u, [], _text(rng, False, f"p{seed}-{counter}")))
        for g in groups:
            if len(members_now[g.gid]) > 1 and rng.random() < 0.5:
                sender = rng.choice(members_now[g.gid])
                counter += 1
                todo.append(Action(0, "group-send", sender,
                                   [m for m in members_now[g.gid] if m != sender],
                                   _text(rng, False, f"g{seed}-{counter}"), group=g.gid))
            if removals.get(g.gid) == r and len(members_now[g.gid]) > 2:
                victim = rng.choice(members_now[g.gid][1:])
                members_now[g.gid].remove(victim)
                todo.append(Action(0, "group-remove", g.owner,
                                   [m for m in members_now[g.gid] if m != g.owner],
                                   group=g.gid, removed=victim))
        rng.shuffle(todo)
        for i, action in enumerate(todo):
            action.time = round(r + 0.8 * (i + 1) / (len(todo) + 1), 4)
        actions.extend(todo)
    script.actions = actions
    return script
