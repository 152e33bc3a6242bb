"""Stochastic trigger, reduction rules and selection rules.

Rule identifiers are the strings ``"1", "1a", "2", "3", "3mod", "4"``.

The trigger is a jump process on the realised branch: while the run sits in
component ``i``, component ``j`` is hit at rate ``r_ij(t)``, the relative rate
of edge ``i -> j``.  Because the realised-branch law then follows the same
linear equation as the weights, hit statistics are Born-consistent and do not
depend on which other components a reduction has zeroed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .state import (
    BrainKind,
    Component,
    FlowGraph,
    ReductionError,
    Superposition,
    zero_others,
)


class Regime(enum.Enum):
    OBSERVER = "observer"
    OBJECTIVE = "objective"


@dataclass(frozen=True)
class RuleSet:
    regime: Regime
    # Mutant switch for harness soundness checks; both regimes keep rule 4 on.
    rule4: bool = True

    @property
    def rules(self) -> tuple[str, ...]:
        base = ("1", "2", "3", "4") if self.regime is Regime.OBSERVER else ("1", "1a", "2", "3mod", "4")
        return base if self.rule4 else tuple(r for r in base if r != "4")

    @classmethod
    def parse(cls, name: str, rule4: bool = True) -> "RuleSet":
        try:
            return cls(Regime(name.lower()), rule4=rule4)
        except ValueError:
            raise ReductionError("UNKNOWN_REGIME", name) from None


OBSERVER = RuleSet(Regime.OBSERVER)
OBJECTIVE = RuleSet(Regime.OBJECTIVE)


@dataclass(frozen=True)
class StochasticEvent:
    time: float
    chosen: str
    origin: str | None = None
    applied_rules: tuple[str, ...] = ("1",)
    reduced: bool = False

    def to_json(self) -> dict:
        return {"time": self.time, "chosen": self.chosen, "origin": self.origin,
                "rules": list(self.applied_rules), "reduced": self.reduced}


def hazard(c: Component, g: FlowGraph, t: float, source: str | None = None) -> float:
    """Instantaneous hit rate of ``c``; ``source`` restricts to edges leaving it."""
    if not c.alive:
        return 0.0
    return math.fsum(e.rate(t) for e in g.incoming(c.id) if source is None or e.source == source)


def sample_hit(
    s: Superposition,
    g: FlowGraph,
    window: tuple[float, float],
    rng: int | np.random.Generator,
) -> StochasticEvent | None:
    """First hit out of the realised branch inside ``window``, or ``None``.

    Each outgoing edge is an independent inhomogeneous Poisson stream; its
    first arrival comes from inverting the integrated rate in closed form.
    """
    t_a, t_b = window
    if not t_b > t_a:
        raise ReductionError("EMPTY_WINDOW", repr(window))
    gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    edges = g.outgoing(s.selected) if s.selected is not None else []
    draws = gen.exponential(size=len(edges))
    best, best_t = None, math.inf
    for e, x in zip(edges, draws):
        t = float(e.profile.next_hit(max(t_a, s.time), x))
        if t < best_t:
            best, best_t = e, t
    if best is None or best_t >= t_b:
        return None
    return StochasticEvent(time=best_t, chosen=best.target, origin=best.source)


def locally_incoherent(a: Component, b: Component) -> bool:
    return a.env != b.env


def _ready_to_conscious(c: Component) -> Component:
    brains = tuple(b.with_kind(BrainKind.CONSCIOUS) if b.kind is BrainKind.READY else b for b in c.brains)
    return replace(c, brains=brains)


def _swap(s: Superposition, c: Component) -> Superposition:
    return s.replace_components(c if x.id == c.id else x for x in s.components)


def apply_rule3(s: Superposition, e: StochasticEvent) -> Superposition:
    chosen = s.get(e.chosen)
    if not chosen.ready_observers():
        raise ReductionError("NO_READY_BRAIN", e.chosen)
    s = _swap(s, _ready_to_conscious(chosen))
    return zero_others(s, e.chosen)


def apply_rule3mod(s: Superposition, e: StochasticEvent) -> Superposition:
    chosen = s.get(e.chosen)
    if not chosen.ready_observers():
        raise ReductionError("NO_READY_BRAIN", e.chosen)
    return _swap(s, _ready_to_conscious(chosen))


def apply_rule1a(s: Superposition, e: StochasticEvent) -> Superposition:
    """Zero every alive component incoherent with the chosen one.

    Coherent partners survive and the remainder is renormalised.
    """
    chosen = s.get(e.chosen)
    others = [c for c in s.components if c.alive and c.id != chosen.id]
    doomed = {c.id for c in others if locally_incoherent(chosen, c)}
    if not doomed:
        return s
    if len(doomed) == len(others):
        return zero_others(s, chosen.id)
    kept = math.fsum(c.weight for c in s.components if c.alive and c.id not in doomed)
    comps = []
    for c in s.components:
        if c.id in doomed:
            comps.append(replace(c, weight=0.0, alive=False))
        elif c.alive and kept > 0.0:
            comps.append(replace(c, weight=c.weight / kept))
        else:
            comps.append(c)
    return s.replace_components(comps)


def rule2_create(parent: Component, observer: str, new_id: str, state: str = "", **overrides) -> Component:
    """Child component in which ``observer`` holds a ready brain state."""
    from .state import BrainLabel

    label = BrainLabel(observer, BrainKind.READY, state)
    brains = tuple(b for b in parent.brains if b.observer != observer) + (label,)
    fields = dict(id=new_id, weight=0.0, brains=brains, alive=True)
    fields.update(overrides)
    return replace(parent, **fields)


def is_anomalous(src: Component, tgt: Component) -> bool:
    """Ready brain state of one observer feeding a different ready state of the same observer."""
    for b in src.brains:
        if b.kind is not BrainKind.READY:
            continue
        other = tgt.brain(b.observer)
        if other is not None and other.kind is BrainKind.READY and other.state != b.state:
            return True
    return False


def rule4_filter(g: FlowGraph, s: Superposition) -> FlowGraph:
    return FlowGraph(tuple(e for e in g.edges if not is_anomalous(s.get(e.source), s.get(e.target))))


def _inherit(prev: Component | None, chosen: Component) -> Component:
    # A brain state carried unchanged from the realised branch keeps its kind.
    if prev is None:
        return chosen
    brains = []
    for b in chosen.brains:
        p = prev.brain(b.observer)
        if p is not None and p.kind is BrainKind.CONSCIOUS and p.state == b.state:
            b = b.with_kind(BrainKind.CONSCIOUS)
        brains.append(b)
    return replace(chosen, brains=tuple(brains))


@dataclass
class HitOutcome:
    state: Superposition
    event: StochasticEvent
    # (observer, brain state, particle, detector) per newly conscious label
    acquisitions: list[tuple[str, str, str, str]] = field(default_factory=list)


def apply_hit(s: Superposition, rules: RuleSet, chosen: str, time: float) -> HitOutcome:
    """Apply the regime's rules to a stochastic choice of ``chosen``."""
    prev = s.get(s.selected) if s.selected is not None else None
    comp = s.get(chosen)
    if not comp.alive:
        comp = replace(comp, alive=True)
    comp = _inherit(prev, comp)
    s = replace(_swap(s, comp), selected=chosen)
    event = StochasticEvent(time=time, chosen=chosen, origin=prev.id if prev else None)
    newly = [(b.observer, b.state, comp.particle, comp.detector) for b in comp.brains if b.kind is BrainKind.READY]
    applied = ["1"]
    reduced = False
    if rules.regime is Regime.OBSERVER:
        if newly:
            s = apply_rule3(s, event)
            applied.append("3")
            reduced = True
    else:
        before = s.alive_ids()
        s = apply_rule1a(s, event)
        if s.alive_ids() != before:
            applied.append("1a")
            reduced = True
        if newly:
            s = apply_rule3mod(s, event)
            applied.append("3mod")
    event = replace(event, applied_rules=tuple(applied), reduced=reduced)
    return HitOutcome(s, event, newly)
