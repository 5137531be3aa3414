"""The metadata adversary: one estimator per leakage vector, run on a server trace.

Every estimator works on the normalized access list.  Where a frame carries
metadata in clear (sender, recipient, group, operation) the estimator uses
it; otherwise it falls back to structure: which endpoint created, wrote and
read which object, when, and how large the payloads were.  The adversary also
knows the public mix directory and the set of user endpoints.
"""
from __future__ import annotations

import bisect
import math
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .runner import Public, RunResult, Truth
from .trace import Access, ServerTrace, accesses

VECTORS = ("NS1", "NS2", "DS1", "DS2", "DS3", "DS4", "T1", "T2", "T3", "CI1", "CI2", "CI3", "CI4")

FLOW_DEPTH = 4
FLOW_HORIZON = 3.0      # how long after reading a mix may emit what it read
REKEY_WINDOW = 1.0
PERMUTATIONS = 1000

META_CATEGORY = {"send": "message", "group-send": "group", "post": "post", "grant": "grant",
                 "group-remove": "rekey"}


@dataclass
class VectorResult:
    accuracy: float | None
    chance: float | None = None
    detail: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"accuracy": self.accuracy, "chance": self.chance, "detail": self.detail}


@dataclass
class AttackReport:
    store: str
    seed: int
    vectors: dict[str, VectorResult]
    diagnostics: dict = field(default_factory=dict)

    def accuracy(self, vector: str) -> float | None:
        return self.vectors[vector].accuracy

    def to_json(self) -> dict:
        return {"store": self.store, "seed": self.seed,
                "vectors": {k: v.to_json() for k, v in self.vectors.items()},
                "diagnostics": self.diagnostics}

    @classmethod
    def from_json(cls, doc: dict) -> "AttackReport":
        vectors = {k: VectorResult(v["accuracy"], v["chance"], v.get("detail", {}))
                   for k, v in doc["vectors"].items()}
        return cls(doc["store"], doc["seed"], vectors, doc.get("diagnostics", {}))


def pearson(xs, ys) -> float:
    """Pearson r; 0.0 when either side is constant (nothing to correlate)."""
    n = len(xs)
    if n < 2:
        return 0.0
    mx, my = sum(xs) / n, sum(ys) / n
    sxx = sum((x - mx) ** 2 for x in xs)
    syy = sum((y - my) ** 2 for y in ys)
    denom = math.sqrt(sxx) * math.sqrt(syy)
    if denom == 0:
        return 0.0
    r = sum((x - mx) * (y - my) for x, y in zip(xs, ys)) / denom
    return max(-1.0, min(1.0, r))


def _clip(r: float) -> float:
    return max(0.0, min(1.0, r))


def balanced_accuracy(truth: list, guess: list) -> float | None:
    classes = sorted(set(truth))
    if not classes:
        return None
    recalls = []
    for c in classes:
        idx = [i for i, t in enumerate(truth) if t == c]
        recalls.append(sum(1 for i in idx if guess[i] == c) / len(idx))
    return sum(recalls) / len(recalls)


class View:
    """Indexes over the access list that every attack shares."""

    def __init__(self, trace: ServerTrace, public: Public):
        self.acc: list[Access] = accesses(trace)
        self.users = list(public.user_endpoints)
        self.user_set = set(self.users)
        self.mix_objects = set(public.mix_objects)
        self.names = list(public.user_names)
        self.creator: dict[str, str] = {}
        self.readers: dict[str, set] = defaultdict(set)
        self.reads_by_obj: dict[str, list[Access]] = defaultdict(list)
        self.writes_by_ep: dict[str, list[Access]] = defaultdict(list)
        self.writes: list[Access] = []
        for a in self.acc:
            if a.op in ("create", "update") and a.obj and a.obj not in self.creator:
                self.creator[a.obj] = a.endpoint
            elif a.op == "read":
                self.readers[a.obj].add(a.endpoint)
                self.reads_by_obj[a.obj].append(a)
            elif a.op == "write":
                self.writes_by_ep[a.endpoint].append(a)
                self.writes.append(a)
        self._read_times = {o: [r.time for r in rs] for o, rs in self.reads_by_obj.items()}
        self._write_times = {e: [w.time for w in ws] for e, ws in self.writes_by_ep.items()}

    def owner(self, obj: str) -> str | None:
        if obj in self.mix_objects or not obj:
            return None
        c = self.creator.get(obj)
        if c in self.user_set:
            return c
        readers = self.readers.get(obj, set()) & self.user_set
        return next(iter(readers)) if len(readers) == 1 else None

    def incoming(self, a: Access) -> str | None:
        """The user receiving this write, if it lands on someone else's object."""
        if a.op != "write":
            return None
        if "to" in a.meta:
            return a.meta["to"]
        o = self.owner(a.obj)
        return o if o is not None and o != a.endpoint else None

    def first_read_after(self, obj: str, t: float):
        """Earliest read of ``obj`` at or after ``t`` per endpoint."""
        reads = self.reads_by_obj.get(obj, [])
        start = bisect.bisect_left(self._read_times.get(obj, []), t)
        seen = {}
        for r in reads[start:]:
            seen.setdefault(r.endpoint, r)
        return seen.values()

    def writes_between(self, ep: str, t0: float, t1: float) -> list[Access]:
        ws = self.writes_by_ep.get(ep, [])
        times = self._write_times.get(ep, [])
        return ws[bisect.bisect_left(times, t0):bisect.bisect_right(times, t1)]

    def group_members(self, upto: int) -> dict[str, set]:
        """Group membership as announced in clear by frames before index ``upto``."""
        groups: dict[str, set] = {}
        for a in self.acc[:upto]:
            op = a.meta.get("op")
            if op == "group-create":
                groups[a.meta["group"]] = set(a.meta["members"])
            elif op == "group-remove":
                groups.get(a.meta["group"], set()).discard(a.meta["user"])
        return groups


# -- NS1 / NS2 --------------------------------------------------------------------

def estimated_neighbors(view: View) -> dict[str, set]:
    nb = {u: set() for u in view.users}

    def link(a, b):
        if a in nb and b in nb and a != b:
            nb[a].add(b)
            nb[b].add(a)

    for a in view.acc:
        m = a.meta
        if "from" in m and "to" in m:
            link(m["from"], m["to"])
        if "owner" in m and "to" in m:
            link(m["owner"], m["to"])
        if "owner" in m and "user" in m and m.get("op") == "read-profile":
            link(m["owner"], m["user"])
        if "members" in m:
            for x in m["members"]:
                for y in m["members"]:
                    link(x, y)
    # Structure: whoever touches an object is linked to its owner; without a
    # known owner, readers of a shared object are linked to each other.
    touch: dict[str, set] = defaultdict(set)
    for a in view.acc:
        if a.obj and a.obj not in view.mix_objects and a.endpoint in view.user_set:
            touch[a.obj].add(a.endpoint)
    for obj, eps in touch.items():
        owner = view.owner(obj)
        if owner is not None:
            for x in eps:
                link(owner, x)
        else:
            readers = view.readers.get(obj, set()) & eps
            for x in readers:
                for y in readers:
                    link(x, y)
    return nb


def attack_degree(view: View, truth: Truth) -> dict[str, VectorResult]:
    nb = estimated_neighbors(view)
    ep_of = truth.endpoints
    users = truth.users
    est = [len(nb.get(ep_of[u], ())) for u in users]
    true = [truth.degree(u) for u in users]
    est_deg = {u: len(nb.get(ep_of[u], ())) for u in users}
    by_ep = {ep_of[u]: u for u in users}
    est2 = [sum(est_deg[by_ep[v]] for v in nb[ep_of[u]]) / len(nb[ep_of[u]]) if nb.get(ep_of[u]) else 0.0
            for u in users]
    true2 = [sum(truth.degree(v) for v in truth.neighbors(u)) / len(truth.neighbors(u))
             if truth.neighbors(u) else 0.0 for u in users]
    if len(users) < 2:
        ok = float(est == true) if users else None
        return {"NS1": VectorResult(ok, 0.0), "NS2": VectorResult(float(est2 == true2) if users else None, 0.0)}
    r1, r2 = pearson(est, true), pearson(est2, true2)
    exact = sum(1 for a, b in zip(est, true) if a == b) / len(users)
    return {"NS1": VectorResult(_clip(r1), 0.0, {"r": r1, "exact_fraction": exact}),
            "NS2": VectorResult(_clip(r2), 0.0, {"r": r2})}


def degree_volume_diagnostic(view: View, truth: Truth) -> float:
    """Correlation of degree with the number of writes landing on each user's objects."""
    volume = Counter()
    for w in view.writes:
        u = view.incoming(w)
        if u is not None:
            volume[u] += 1
    users = truth.users
    return pearson([volume[truth.endpoints[u]] for u in users], [truth.degree(u) for u in users])


# -- DS2 / CI3: linking ----------------------------------------------------------

def link_guess(view: View, index: int, rng: random.Random) -> str | None:
    a = view.acc[index]
    sender = a.endpoint
    if "to" in a.meta:
        return a.meta["to"]
    if "group" in a.meta:
        members = sorted(view.group_members(index).get(a.meta["group"], set()) - {sender})
        if members:
            return members[0]
    best: dict[str, float] = {}
    frontier = [(a.obj, a.time)]
    visited = set()
    for _ in range(FLOW_DEPTH):
        nxt = []
        for obj, t0 in frontier:
            if (obj, t0) in visited:
                continue
            visited.add((obj, t0))
            for r in view.first_read_after(obj, t0):
                if r.endpoint == sender:
                    continue
                if r.endpoint in view.user_set:
                    if view.owner(obj) == r.endpoint and r.time < best.get(r.endpoint, math.inf):
                        best[r.endpoint] = r.time
                else:
                    for w in view.writes_between(r.endpoint, r.time, r.time + FLOW_HORIZON):
                        nxt.append((w.obj, w.time))
        frontier = nxt
    if best:
        return min(best, key=lambda e: (best[e], e))
    others = [u for u in view.users if u != sender]
    return rng.choice(others) if others else None


def attack_linking(view: View, truth: Truth, seed: int) -> dict[str, VectorResult]:
    rng = random.Random(f"linking-{seed}")
    ep = truth.endpoints
    n = len(truth.users)
    out = {}
    for vector, category in (("CI3", "message"), ("DS2", "group")):
        queries = truth.of(category)
        if not queries or n < 2:
            out[vector] = VectorResult(None, None, {"queries": 0})
            continue
        hits, chance = 0, 0.0
        for q in queries:
            guess = link_guess(view, q.index, rng)
            targets = {ep[t] for t in q.targets}
            hits += guess in targets
            chance += len(targets) / (n - 1)
        out[vector] = VectorResult(hits / len(queries), chance / len(queries), {"queries": len(queries)})
    return out


# -- T1 / T2 / T3: timing ---------------------------------------------------------

def next_delivery(view: View, index: int) -> str | None:
    """The recipient named in clear, else the first user object written by someone else."""
    for a in view.acc[index:]:
        if a.op != "write":
            continue
        u = view.incoming(a)
        if u is not None and u != view.acc[index].endpoint:
            return u
    return None


def _permutation_p(guesses: list, targets: list, seed: int) -> float:
    observed = sum(g in t for g, t in zip(guesses, targets))
    rng = random.Random(f"perm-{seed}")
    shuffled = list(targets)
    above = 0
    for _ in range(PERMUTATIONS):
        rng.shuffle(shuffled)
        if sum(g in t for g, t in zip(guesses, shuffled)) >= observed:
            above += 1
    return (above + 1) / (PERMUTATIONS + 1)


def rekey_guess(view: View, index: int) -> set:
    a = view.acc[index]
    if "group" in a.meta:
        members = view.group_members(index + 1).get(a.meta["group"], set())
        return members - {a.endpoint}
    guess = set()
    for w in view.acc[index:]:
        if w.time > a.time + REKEY_WINDOW:
            break
        u = view.incoming(w)
        if u is not None and u != a.endpoint:
            guess.add(u)
    return guess


def attack_timing(view: View, truth: Truth, seed: int) -> dict[str, VectorResult]:
    ep = truth.endpoints
    n = len(truth.users)
    out = {}
    for vector, category in (("T1", "message"), ("T2", "grant")):
        queries = truth.of(category)
        if not queries or n < 2:
            out[vector] = VectorResult(None, None, {"queries": 0})
            continue
        guesses = [next_delivery(view, q.index) for q in queries]
        targets = [{ep[t] for t in q.targets} for q in queries]
        acc = sum(g in t for g, t in zip(guesses, targets)) / len(queries)
        out[vector] = VectorResult(acc, 1 / (n - 1), {"queries": len(queries),
                                                       "permutation_p": _permutation_p(guesses, targets, seed)})
    queries = truth.of("rekey")
    if not queries:
        out["T3"] = VectorResult(None, None, {"queries": 0})
    else:
        scores = []
        for q in queries:
            guess = rekey_guess(view, q.index)
            real = {ep[t] for t in q.targets}
            union = guess | real
            scores.append(len(guess & real) / len(union) if union else 1.0)
        out["T3"] = VectorResult(sum(scores) / len(scores), None, {"queries": len(queries)})
    return out


# -- DS1 / DS3 / DS4: sizes and counts ------------------------------------------

def attack_sizes(view: View, truth: Truth) -> dict[str, VectorResult]:
    ep = truth.endpoints
    users = truth.users
    own_writes = Counter()
    slots: dict[tuple, set] = defaultdict(set)
    for w in view.writes:
        if w.endpoint not in view.user_set:
            continue
        if "op" in w.meta:
            # Clear operation names: count exactly what was asked.
            if w.meta["op"] in ("post", "grant"):
                own_writes[w.endpoint] += 1
            if w.meta["op"] == "post":
                slots[(w.endpoint, w.obj)].add(math.floor(w.time))
        elif view.owner(w.obj) == w.endpoint:
            own_writes[w.endpoint] += 1
            slots[(w.endpoint, w.obj)].add(math.floor(w.time))
    history = Counter()
    for (e, _obj), s in slots.items():
        history[e] = max(history[e], len(s))
    out = {}
    if len(users) >= 2:
        true1 = [truth.posts.get(u, 0) + truth.grants.get(u, 0) for u in users]
        r1 = pearson([own_writes[ep[u]] for u in users], true1)
        true4 = [truth.posts.get(u, 0) for u in users]
        r4 = pearson([history[ep[u]] for u in users], true4)
        out["DS1"] = VectorResult(_clip(r1), 0.0, {"r": r1})
        out["DS4"] = VectorResult(_clip(r4), 0.0, {"r": r4})
    else:
        out["DS1"] = VectorResult(None, 0.0)
        out["DS4"] = VectorResult(None, 0.0)
    queries = truth.of("message")
    if len(queries) < 2:
        out["DS3"] = VectorResult(None, 0.5, {"queries": len(queries)})
    else:
        sizes = [view.acc[q.index].size for q in queries]
        lo, hi = min(sizes), max(sizes)
        guess = [hi > lo and s > (lo + hi) / 2 for s in sizes]
        real = [q.media for q in queries]
        out["DS3"] = VectorResult(balanced_accuracy(real, guess), 0.5,
                                  {"queries": len(queries), "distinct_sizes": len(set(sizes))})
    return out


# -- CI1 / CI2 / CI4: endpoints and control traffic ------------------------------

def identify_endpoints(view: View) -> dict[str, str]:
    """Endpoint -> user name, from logins or names written in clear by that endpoint."""
    found: dict[str, Counter] = defaultdict(Counter)
    patterns = {n: re.compile(re.escape(n.encode()) + rb"(?![0-9A-Za-z])") for n in view.names}
    for a in view.acc:
        if a.endpoint not in view.user_set:
            continue
        if a.op == "login":
            found[a.endpoint][a.meta["name"]] += 1000
        elif a.payload:
            for name, pat in patterns.items():
                if pat.search(a.payload):
                    found[a.endpoint][name] += 1
    return {e: c.most_common(1)[0][0] for e, c in found.items() if c}


def attack_endpoints(view: View, truth: Truth) -> dict[str, VectorResult]:
    ep = truth.endpoints
    users = truth.users
    out = {}
    nb = estimated_neighbors(view)
    predicted = {frozenset((a, b)) for a, s in nb.items() for b in s}
    real = {frozenset(ep[x] for x in e) for e in truth.edges}
    tp = len(predicted & real)
    if not real:
        out["CI1"] = VectorResult(None, None)
    else:
        precision = tp / len(predicted) if predicted else 0.0
        recall = tp / len(real)
        f1 = 2 * precision * recall / (precision + recall) if tp else 0.0
        density = len(real) / (len(users) * (len(users) - 1) / 2)
        out["CI1"] = VectorResult(f1, density, {"precision": precision, "recall": recall})

    names = identify_endpoints(view)
    if users:
        located = sum(1 for u in users if names.get(ep[u]) == u and ep[u] in truth.locations)
        out["CI2"] = VectorResult(located / len(users), 1 / len(users), {"identified": len(names)})
    else:
        out["CI2"] = VectorResult(None, None)

    queries = [q for q in truth.queries if q.category in ("message", "group", "post", "grant", "rekey")]
    if not queries:
        out["CI4"] = VectorResult(None, None)
    else:
        real_cat, guess_cat = [], []
        for q in queries:
            a = view.acc[q.index]
            if a.meta.get("op") in META_CATEGORY:
                g = META_CATEGORY[a.meta["op"]]
            elif a.op == "write" and view.owner(a.obj) == a.endpoint:
                g = "post"
            else:
                g = "message"
            real_cat.append(q.category)
            guess_cat.append(g)
        out["CI4"] = VectorResult(balanced_accuracy(real_cat, guess_cat), 1 / len(set(real_cat)),
                                  {"queries": len(queries)})
    return out


def evaluate(run: RunResult, seed: int = 0) -> AttackReport:
    view = View(run.trace, run.public)
    truth = run.truth
    vectors: dict[str, VectorResult] = {}
    vectors.update(attack_degree(view, truth))
    vectors.update(attack_linking(view, truth, seed))
    vectors.update(attack_timing(view, truth, seed))
    vectors.update(attack_sizes(view, truth))
    vectors.update(attack_endpoints(view, truth))
    diagnostics = {"degree_vs_incoming_volume_r": degree_volume_diagnostic(view, truth)
                   if len(truth.users) >= 2 else None,
                   "events": len(run.trace), "delivered": run.delivered}
    return AttackReport(run.trace.kind, seed, {k: vectors[k] for k in VECTORS}, diagnostics)
