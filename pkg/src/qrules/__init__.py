"""Observer vs objective state-reduction rules: simulator and indistinguishability harness."""

from .rules import OBJECTIVE, OBSERVER, Regime, RuleSet
from .scenario import CATALOG, Scenario, builtin, parse, validate
from .state import BrainKind, BrainLabel, Component, FlowEdge, FlowGraph, Superposition

__all__ = [
    "BrainKind",
    "BrainLabel",
    "CATALOG",
    "Component",
    "FlowEdge",
    "FlowGraph",
    "OBJECTIVE",
    "OBSERVER",
    "Regime",
    "RuleSet",
    "Scenario",
    "Superposition",
    "builtin",
    "parse",
    "validate",
]
