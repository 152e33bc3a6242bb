"""Weighted, labelled superpositions and probability-current flow between them.

Components carry squared amplitudes (real weights) only; phases live in
:mod:`qrules.nondemolition`.  Flow edges carry a *relative* rate ``r(t)``:
the current along an edge is ``r(t) * w_source``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

NORM_TOL = 1e-6
CONSERVATION_TOL = 1e-9


class ReductionError(ValueError):
    """Raised for contract violations; ``code`` names the failure."""

    def __init__(self, code: str, message: str = ""):
        super().__init__(f"{code}: {message}" if message else code)
        self.code = code


class BrainKind(enum.Enum):
    ABSENT = "absent"
    UNKNOWN_X = "unknown"
    READY = "ready"
    CONSCIOUS = "conscious"


@dataclass(frozen=True)
class BrainLabel:
    observer: str
    kind: BrainKind
    state: str = ""

    def with_kind(self, kind: BrainKind) -> "BrainLabel":
        order = {BrainKind.ABSENT: 0, BrainKind.UNKNOWN_X: 0,
                 BrainKind.READY: 1, BrainKind.CONSCIOUS: 2}
        if order[kind] < order[self.kind]:
            raise ReductionError("BAD_TRANSITION", f"{self.kind.value} -> {kind.value}")
        return replace(self, kind=kind)


@dataclass(frozen=True)
class Component:
    id: str
    weight: float
    particle: str = "-"
    detector: str = "-"
    brains: tuple[BrainLabel, ...] = ()
    env: str = ""
    alive: bool = True

    def __post_init__(self):
        observers = [b.observer for b in self.brains]
        if len(set(observers)) != len(observers):
            raise ReductionError("DUPLICATE_OBSERVER", self.id)
        if self.weight < 0:
            raise ReductionError("NEGATIVE_WEIGHT", self.id)
        if not self.env:
            object.__setattr__(self, "env", self.id)

    def brain(self, observer: str) -> BrainLabel | None:
        for b in self.brains:
            if b.observer == observer:
                return b
        return None

    def ready_observers(self) -> list[str]:
        return [b.observer for b in self.brains if b.kind is BrainKind.READY]


@dataclass(frozen=True)
class Superposition:
    components: tuple[Component, ...]
    time: float = 0.0
    # Component realised by the most recent stochastic choice (or the start).
    selected: str | None = None

    def __post_init__(self):
        ids = [c.id for c in self.components]
        if len(set(ids)) != len(ids):
            raise ReductionError("DUPLICATE_ID", ", ".join(ids))

    def get(self, cid: str) -> Component:
        for c in self.components:
            if c.id == cid:
                return c
        raise ReductionError("UNKNOWN_COMPONENT", cid)

    @property
    def ids(self) -> list[str]:
        return [c.id for c in self.components]

    def alive_ids(self) -> frozenset[str]:
        return frozenset(c.id for c in self.components if c.alive)

    def weights(self) -> dict[str, float]:
        return {c.id: c.weight for c in self.components}

    def replace_components(self, comps: Iterable[Component], **kw) -> "Superposition":
        return replace(self, components=tuple(comps), **kw)


# --- rate profiles -------------------------------------------------------


@dataclass(frozen=True)
class Constant:
    """Constant relative rate on ``[start, end)``."""

    rate: float
    start: float
    end: float

    def __call__(self, t: float) -> float:
        return self.rate if self.start <= t < self.end else 0.0

    def integral(self, a: float, b: float) -> float:
        lo, hi = max(a, self.start), min(b, self.end)
        return self.rate * (hi - lo) if hi > lo else 0.0

    def next_hit(self, t0, e):
        """Hit time after ``t0`` for unit-exponential draws ``e`` (inf if none)."""
        import numpy as np

        t0 = np.maximum(np.asarray(t0, dtype=float), self.start)
        if self.rate <= 0:
            return np.full_like(t0, np.inf)
        t = t0 + np.asarray(e) / self.rate
        return np.where((t < self.end) & (t0 < self.end), t, np.inf)


@dataclass(frozen=True)
class Ramp:
    """Moves ``fraction`` of the source weight linearly across ``[start, end)``.

    The relative rate is ``f'/(1 - f)`` with ``f`` the linear schedule, so an
    isolated edge transfers weight at constant current; ``fraction=1`` diverges
    at ``end`` and empties the source.
    """

    start: float
    end: float
    fraction: float = 1.0

    def _remaining(self, t):
        import numpy as np

        tau = np.clip((np.asarray(t, dtype=float) - self.start) / (self.end - self.start), 0.0, 1.0)
        return 1.0 - self.fraction * tau

    def __call__(self, t: float) -> float:
        if not (self.start <= t < self.end):
            return 0.0
        span = self.end - self.start
        return (self.fraction / span) / float(self._remaining(t))

    def integral(self, a: float, b: float) -> float:
        lo, hi = max(a, self.start), min(b, self.end)
        if hi <= lo:
            return 0.0
        g_hi = float(self._remaining(hi))
        if g_hi <= 0.0:
            return math.inf
        return math.log(float(self._remaining(lo)) / g_hi)

    def next_hit(self, t0, e):
        import numpy as np

        t0 = np.maximum(np.asarray(t0, dtype=float), self.start)
        g = self._remaining(t0) * np.exp(-np.asarray(e))
        floor = 1.0 - self.fraction
        with np.errstate(divide="ignore", invalid="ignore"):
            t = self.start + (self.end - self.start) * (1.0 - g) / self.fraction
        ok = (t0 < self.end) & (g > floor) & (self.fraction > 0)
        return np.where(ok, np.minimum(t, np.nextafter(self.end, -np.inf)), np.inf)


RateProfile = Constant | Ramp


@dataclass(frozen=True)
class FlowEdge:
    source: str
    target: str
    profile: RateProfile

    def __post_init__(self):
        if self.source == self.target:
            raise ReductionError("SELF_EDGE", self.source)

    @property
    def window(self) -> tuple[float, float]:
        return (self.profile.start, self.profile.end)

    def rate(self, t: float) -> float:
        return max(self.profile(t), 0.0)


@dataclass(frozen=True)
class FlowGraph:
    edges: tuple[FlowEdge, ...] = field(default_factory=tuple)

    def outgoing(self, cid: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.source == cid]

    def incoming(self, cid: str) -> list[FlowEdge]:
        return [e for e in self.edges if e.target == cid]

    def breakpoints(self) -> list[float]:
        return sorted({x for e in self.edges for x in e.window})


# --- operations ----------------------------------------------------------


def total_weight(s: Superposition) -> float:
    return math.fsum(c.weight for c in s.components if c.alive)


def check_normalized(s: Superposition, tol: float = NORM_TOL) -> None:
    w = total_weight(s)
    if abs(w - 1.0) > tol:
        raise ReductionError("UNNORMALIZED_INPUT", f"total weight {w!r}")


def evolve_step(s: Superposition, g: FlowGraph, dt: float) -> Superposition:
    """One forward-Euler step of the flow graph.

    Rates are sampled at the start of the step.  Outflow from a source is
    capped at its weight, scaling its edges proportionally.
    """
    if dt <= 0:
        raise ReductionError("NEGATIVE_DT", repr(dt))
    check_normalized(s)
    w = s.weights()
    alive = {c.id: c.alive for c in s.components}
    out: dict[str, list[tuple[str, float]]] = {}
    for e in g.edges:
        if not alive.get(e.source) or w[e.source] <= 0.0:
            continue
        amount = e.rate(s.time) * dt * w[e.source]
        if amount > 0.0:
            out.setdefault(e.source, []).append((e.target, amount))
    delta = dict.fromkeys(w, 0.0)
    for src, moves in out.items():
        requested = math.fsum(a for _, a in moves)
        scale = min(1.0, w[src] / requested)
        for tgt, a in moves:
            delta[tgt] += a * scale
        delta[src] -= w[src] if scale < 1.0 else requested
    comps = []
    for c in s.components:
        nw = max(w[c.id] + delta[c.id], 0.0)
        revived = c.alive or delta[c.id] > 0.0
        comps.append(replace(c, weight=nw, alive=revived))
    return s.replace_components(comps, time=s.time + dt)


def zero_others(s: Superposition, keep: str) -> Superposition:
    target = s.get(keep)
    if not target.alive:
        raise ReductionError("DEAD_COMPONENT", keep)
    comps = [
        replace(c, weight=1.0, alive=True) if c.id == keep else replace(c, weight=0.0, alive=False)
        for c in s.components
    ]
    return s.replace_components(comps)


def make_superposition(components: Sequence[Component], time: float = 0.0) -> Superposition:
    """Build a start state; the selected branch is the heaviest component."""
    s = Superposition(tuple(components), time=time)
    check_normalized(s)
    heaviest = max(s.components, key=lambda c: c.weight)
    return replace(s, selected=heaviest.id)
