"""Baseline vs concealed comparison across seeds: the headline result table."""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

from .attacks import VECTORS, AttackReport, evaluate
from .runner import run_scenario
from .scenario import generate

# Vectors that must not leak more under the concealed store than under the baseline.
DOMINANCE_VECTORS = ("NS1", "DS1", "DS2", "DS3", "DS4", "T1", "T2", "T3", "CI1", "CI3", "CI4")
LINKING_VECTORS = ("DS2", "CI3")
LINKING_MARGIN = 0.1
DEGREE_R_LIMIT = 0.2


@dataclass
class Comparison:
    doc: dict

    def to_json(self) -> str:
        return json.dumps(self.doc, sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "Comparison":
        return cls(json.loads(text))

    def to_text(self) -> str:
        return render_table(self.doc)

    @property
    def passed(self) -> bool:
        return all(c["passed"] for c in self.doc["criteria"].values())


def _mean(values):
    values = [v for v in values if v is not None]
    return sum(values) / len(values) if values else None


def _fmt(x) -> str:
    return "n/a" if x is None else f"{x:.3f}"


def compare(reports: list[AttackReport]) -> Comparison:
    base = {r.seed: r for r in reports if r.store == "baseline"}
    conc = {r.seed: r for r in reports if r.store == "concealed"}
    seeds = sorted(set(base) & set(conc))
    rows = {}
    for v in VECTORS:
        b = [base[s].accuracy(v) for s in seeds]
        c = [conc[s].accuracy(v) for s in seeds]
        dominated = all(x is None or y is None or x >= y for x, y in zip(b, c))
        rows[v] = {
            "baseline": _mean(b),
            "concealed": _mean(c),
            "chance": _mean([conc[s].vectors[v].chance for s in seeds]),
            "dominance": dominated,
            "per_seed": {str(s): [x, y] for s, x, y in zip(seeds, b, c)},
        }
    criteria = {}
    criteria["dominance"] = {
        "vectors": list(DOMINANCE_VECTORS),
        "passed": all(rows[v]["dominance"] for v in DOMINANCE_VECTORS),
        "failing": [v for v in DOMINANCE_VECTORS if not rows[v]["dominance"]],
    }
    for v in LINKING_VECTORS:
        # Pool the queries of all seeds so one limit is checked on one estimate.
        hits = sum((conc[s].accuracy(v) or 0) * conc[s].vectors[v].detail.get("queries", 0) for s in seeds)
        n = sum(conc[s].vectors[v].detail.get("queries", 0) for s in seeds)
        chance = sum((conc[s].vectors[v].chance or 0) * conc[s].vectors[v].detail.get("queries", 0)
                     for s in seeds)
        acc = hits / n if n else None
        limit = chance / n + LINKING_MARGIN if n else None
        criteria[f"linking_{v}"] = {"pooled_accuracy": acc, "limit": limit,
                                    "passed": acc is not None and acc <= limit}
    rs = [conc[s].vectors["NS1"].detail.get("r", 0.0) for s in seeds]
    worst = max((abs(r) for r in rs), default=None)
    criteria["degree_correlation"] = {"max_abs_r": worst,
                                      "passed": worst is not None and worst < DEGREE_R_LIMIT}
    diag = {
        "degree_vs_incoming_volume_r": {
            "baseline": _mean([base[s].diagnostics.get("degree_vs_incoming_volume_r") for s in seeds]),
            "concealed": _mean([conc[s].diagnostics.get("degree_vs_incoming_volume_r") for s in seeds]),
        },
        "delivered": _mean([conc[s].diagnostics.get("delivered") for s in seeds]),
    }
    return Comparison({"seeds": seeds, "vectors": rows, "criteria": criteria, "diagnostics": diag})


def render_table(doc: dict) -> str:
    lines = [f"{'vector':<8}{'baseline':>10}{'concealed':>11}{'chance':>9}  dominance"]
    for v in VECTORS:
        row = doc["vectors"][v]
        lines.append(f"{v:<8}{_fmt(row['baseline']):>10}{_fmt(row['concealed']):>11}"
                     f"{_fmt(row['chance']):>9}  {'yes' if row['dominance'] else 'NO'}")
    lines.append("")
    for name, c in sorted(doc["criteria"].items()):
        extra = {k: v for k, v in sorted(c.items()) if k != "passed"}
        shown = ", ".join(f"{k}={_fmt(v) if isinstance(v, float) or v is None else v}" for k, v in extra.items())
        lines.append(f"{'PASS' if c['passed'] else 'FAIL'} {name}: {shown}")
    vol = doc["diagnostics"]["degree_vs_incoming_volume_r"]
    lines.append(f"diagnostic degree~incoming-volume r: baseline={_fmt(vol['baseline'])} "
                 f"concealed={_fmt(vol['concealed'])}")
    lines.append(f"seeds: {' '.join(str(s) for s in doc['seeds'])}")
    return "\n".join(lines) + "\n"


def run_seed(seed: int, n_users: int = 20, n_mixes: int = 2, **kwargs) -> list[AttackReport]:
    script = generate(seed, n_users=n_users, n_mixes=n_mixes, **kwargs)
    return [evaluate(run_scenario(script, kind), seed) for kind in ("baseline", "concealed")]


def run_many(seeds, n_users: int = 20, n_mixes: int = 2, **kwargs) -> tuple[Comparison, float]:
    start = time.perf_counter()
    reports = []
    for seed in seeds:
        reports.extend(run_seed(seed, n_users, n_mixes, **kwargs))
    return compare(reports), time.perf_counter() - start
