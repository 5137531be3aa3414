"""Metadata-leakage harness: scripted scenarios, server traces, attacks and comparison."""
from .attacks import VECTORS, AttackReport, VectorResult, evaluate
from .compare import Comparison, compare, run_many, run_seed
from .runner import RunResult, run_scenario
from .scenario import ScenarioScript, empty_script, generate
from .trace import ServerTrace, TraceEvent

__all__ = [
    "VECTORS", "AttackReport", "Comparison", "RunResult", "ScenarioScript", "ServerTrace",
    "TraceEvent", "VectorResult", "compare", "empty_script", "evaluate", "generate",
    "run_many", "run_scenario", "run_seed",
]
