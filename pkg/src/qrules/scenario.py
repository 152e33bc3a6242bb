"""Scenario language (``.rsc``): parser, formatter, validator and catalog.

The grammar is line oriented; see ``docs/scenario-grammar.md``.  A minimal
file::

    scenario eq1-detector
    component c1 weight=1 particle=psi detector=D0
    component c2 detector=D1
    interact particle-detector window=0,1
      flow c1 -> c2 ramp
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field
from importlib import resources

from .rules import is_anomalous, rule4_filter
from .state import (
    BrainKind,
    BrainLabel,
    Component,
    Constant,
    FlowEdge,
    FlowGraph,
    Ramp,
    Superposition,
    make_superposition,
)

WEIGHT_TOL = 1e-9


class ScenarioError(ValueError):
    def __init__(self, code: str, message: str, line: int = 0, col: int = 0, expected: tuple[str, ...] = ()):
        where = f" at {line}:{col}" if line else ""
        hint = f" (expected {', '.join(expected)})" if expected else ""
        super().__init__(f"{code}{where}: {message}{hint}")
        self.code = code
        self.line = line
        self.col = col
        self.expected = expected


class InteractionKind(enum.Enum):
    PARTICLE_DETECTOR = "particle-detector"
    PHYSIOLOGICAL = "physiological"
    DETECTOR_DETECTOR = "detector-detector"


@dataclass(frozen=True)
class Flow:
    source: str
    target: str
    profile: str  # "ramp" or "const"
    value: float  # ramp fraction or constant rate
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Interaction:
    kind: InteractionKind
    window: tuple[float, float]
    flows: tuple[Flow, ...]
    observer: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ComponentDecl:
    id: str
    weight: float = 0.0
    particle: str = "-"
    detector: str = "-"
    brains: tuple[BrainLabel, ...] = ()
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Scenario:
    name: str
    observers: tuple[str, ...]
    components: tuple[ComponentDecl, ...]
    interactions: tuple[Interaction, ...]
    envs: tuple[tuple[str, tuple[str, ...]], ...] = ()

    def env_of(self, cid: str) -> str:
        for tag, members in self.envs:
            if cid in members:
                return tag
        return cid

    def initial_state(self) -> Superposition:
        comps = [
            Component(d.id, d.weight, d.particle, d.detector, d.brains, env=self.env_of(d.id))
            for d in self.components
        ]
        return make_superposition(comps, time=self.start_time())

    def graph(self) -> FlowGraph:
        edges = []
        for it in self.interactions:
            a, b = it.window
            for f in it.flows:
                prof = Ramp(a, b, f.value) if f.profile == "ramp" else Constant(f.value, a, b)
                edges.append(FlowEdge(f.source, f.target, prof))
        return FlowGraph(tuple(edges))

    def start_time(self) -> float:
        return min((it.window[0] for it in self.interactions), default=0.0)

    def end_time(self) -> float:
        return max((it.window[1] for it in self.interactions), default=0.0)


# --- lexer ----------------------------------------------------------------

_ID = re.compile(r"[A-Za-z_][A-Za-z0-9_'.\-]*\Z")
_TAG = re.compile(r"[^\s#=,]+\Z")
_KINDS = {k.value: k for k in BrainKind}


@dataclass
class _Tok:
    text: str
    line: int
    col: int


def _tokens(line: str, lineno: int) -> list[_Tok]:
    out = []
    for m in re.finditer(r"\S+", line.split("#", 1)[0]):
        out.append(_Tok(m.group(), lineno, m.start() + 1))
    return out


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.name: str | None = None
        self.observers: list[str] = []
        self.components: list[ComponentDecl] = []
        self.interactions: list[Interaction] = []
        self.pending: list[tuple[_Tok, list[_Tok]]] = []  # unresolved references
        self.envs: list[tuple[str, tuple[str, ...]]] = []
        self._current: dict | None = None

    def err(self, tok: _Tok, msg: str, expected=(), code="SYNTAX_ERROR"):
        raise ScenarioError(code, msg, tok.line, tok.col, tuple(expected))

    def ident(self, tok: _Tok) -> str:
        if not _ID.match(tok.text):
            self.err(tok, f"bad identifier {tok.text!r}", ["identifier"])
        return tok.text

    def number(self, tok: _Tok, text: str) -> float:
        try:
            x = float(text)
        except ValueError:
            self.err(tok, f"bad number {text!r}", ["number"])
        if not math.isfinite(x):
            self.err(tok, f"non-finite number {text!r}", ["finite number"])
        return x

    def keyvals(self, toks: list[_Tok], allowed: set[str]) -> list[tuple[_Tok, str, str]]:
        out = []
        for t in toks:
            key, eq, val = t.text.partition("=")
            if not eq or key not in allowed or not val:
                self.err(t, f"unexpected {t.text!r}", sorted(f"{k}=" for k in allowed))
            out.append((t, key, val))
        return out

    def run(self) -> Scenario:
        for lineno, line in enumerate(self.text.splitlines(), start=1):
            toks = _tokens(line, lineno)
            if not toks:
                continue
            head = toks[0]
            if head.text != "flow":
                self._close()
            handler = getattr(self, f"_kw_{head.text.replace('-', '_')}", None)
            if head.text not in {"scenario", "observer", "component", "env", "interact", "flow"} or handler is None:
                self.err(head, f"unknown statement {head.text!r}",
                         ["scenario", "observer", "component", "env", "interact", "flow"])
            handler(head, toks[1:])
        self._close()
        return self._finish()

    def _kw_scenario(self, head, rest):
        if self.name is not None:
            self.err(head, "duplicate scenario name")
        if len(rest) != 1 or not _ID.match(rest[0].text):
            self.err(rest[0] if rest else head, "scenario needs one name", ["name"])
        self.name = rest[0].text

    def _kw_observer(self, head, rest):
        if not rest:
            self.err(head, "observer needs an id", ["identifier"])
        for t in rest:
            oid = self.ident(t)
            if oid in self.observers:
                self.err(t, f"duplicate observer {oid!r}", code="DUPLICATE_ID")
            self.observers.append(oid)

    def _kw_component(self, head, rest):
        if not rest:
            self.err(head, "component needs an id", ["identifier"])
        cid = self.ident(rest[0])
        if any(c.id == cid for c in self.components):
            self.err(rest[0], f"duplicate component {cid!r}", code="DUPLICATE_ID")
        fields: dict = {"brains": []}
        for t, key, val in self.keyvals(rest[1:], {"weight", "particle", "detector", "brain"}):
            if key == "weight":
                w = self.number(t, val)
                if w < 0:
                    self.err(t, "negative weight", code="BAD_NORMALIZATION")
                fields["weight"] = w
            elif key == "brain":
                parts = val.split(":")
                if len(parts) not in (2, 3) or parts[1] not in _KINDS or not _ID.match(parts[0]):
                    self.err(t, f"bad brain label {val!r}", ["observer:kind[:state]"])
                if len(parts) == 3 and not _TAG.match(parts[2]):
                    self.err(t, f"bad brain state {parts[2]!r}", ["tag"])
                if parts[0] not in self.observers:
                    self.err(t, f"undeclared observer {parts[0]!r}", code="UNKNOWN_REFERENCE")
                if any(b.observer == parts[0] for b in fields["brains"]):
                    self.err(t, f"second label for observer {parts[0]!r}", code="DUPLICATE_ID")
                state = parts[2] if len(parts) == 3 else ""
                fields["brains"].append(BrainLabel(parts[0], _KINDS[parts[1]], state))
            else:
                if key in fields:
                    self.err(t, f"repeated {key}")
                if not _TAG.match(val):
                    self.err(t, f"bad tag {val!r}", ["tag"])
                fields[key] = val
        fields["brains"] = tuple(fields["brains"])
        self.components.append(ComponentDecl(cid, line=head.line, **fields))

    def _kw_env(self, head, rest):
        if len(rest) < 2:
            self.err(head, "env needs a tag and components", ["tag", "component"])
        tag = rest[0].text
        if not _TAG.match(tag):
            self.err(rest[0], f"bad tag {tag!r}", ["tag"])
        if any(tag == t for t, _ in self.envs):
            self.err(rest[0], f"duplicate env tag {tag!r}", code="DUPLICATE_ID")
        ids = []
        for t in rest[1:]:
            cid = self.ident(t)
            if cid in ids or any(cid in members for _, members in self.envs):
                self.err(t, f"component {cid!r} already has an env tag", code="DUPLICATE_ID")
            ids.append(cid)
            self.pending.append((t, [t]))
        self.envs.append((tag, tuple(ids)))

    def _kw_interact(self, head, rest):
        if not rest or rest[0].text not in {k.value for k in InteractionKind}:
            self.err(rest[0] if rest else head, "unknown interaction kind",
                     [k.value for k in InteractionKind])
        kind = InteractionKind(rest[0].text)
        window = None
        observer = None
        for t, key, val in self.keyvals(rest[1:], {"window", "observer"}):
            if key == "window":
                a, sep, b = val.partition(",")
                if not sep:
                    self.err(t, "window needs start,end", ["start,end"])
                window = (self.number(t, a), self.number(t, b))
                if not window[1] > window[0]:
                    self.err(t, "window end must exceed start")
            else:
                observer = val
                if not _ID.match(val):
                    self.err(t, f"bad identifier {val!r}", ["identifier"])
                if observer not in self.observers:
                    self.err(t, f"undeclared observer {observer!r}", code="UNKNOWN_REFERENCE")
        if window is None:
            self.err(head, "interaction needs a window", ["window="])
        if kind is InteractionKind.PHYSIOLOGICAL and observer is None:
            self.err(head, "physiological interaction needs an observer", ["observer="])
        self._current = {"kind": kind, "window": window, "observer": observer, "flows": [], "line": head.line, "tok": head}

    def _kw_flow(self, head, rest):
        if self._current is None:
            self.err(head, "flow outside an interaction", ["interact"])
        if len(rest) < 4 or rest[1].text != "->":
            self.err(rest[1] if len(rest) > 1 else head, "flow needs 'src -> dst profile'", ["src -> dst"])
        src, dst = self.ident(rest[0]), self.ident(rest[2])
        if src == dst:
            self.err(rest[2], "flow source equals target")
        self.pending.append((rest[0], [rest[0], rest[2]]))
        ptok = rest[3]
        if ptok.text == "ramp":
            value = 1.0
            for t, _, val in self.keyvals(rest[4:], {"fraction"}):
                value = self.number(t, val)
                if value < 0:
                    self.err(t, "negative fraction", code="NEGATIVE_RATE")
                if not 0 < value <= 1:
                    self.err(t, "fraction must lie in (0, 1]")
        elif ptok.text == "const":
            kv = self.keyvals(rest[4:], {"rate"})
            if len(kv) != 1:
                self.err(ptok, "const profile needs one rate=", ["rate="])
            t, _, val = kv[0]
            value = self.number(t, val)
            if value < 0:
                self.err(t, "negative rate", code="NEGATIVE_RATE")
        else:
            self.err(ptok, f"unknown profile {ptok.text!r}", ["ramp", "const"])
        self._current["flows"].append(Flow(src, dst, ptok.text, value, line=head.line))

    def _close(self):
        cur, self._current = self._current, None
        if cur is None:
            return
        if not cur["flows"]:
            self.err(cur["tok"], "interaction without flows", ["flow"])
        self.interactions.append(
            Interaction(cur["kind"], cur["window"], tuple(cur["flows"]), cur["observer"], line=cur["line"])
        )

    def _finish(self) -> Scenario:
        if self.name is None:
            raise ScenarioError("SYNTAX_ERROR", "missing scenario statement", 1, 1, ("scenario",))
        known = {c.id for c in self.components}
        for _, refs in self.pending:
            for t in refs:
                if t.text not in known:
                    self.err(t, f"undeclared component {t.text!r}", code="UNKNOWN_REFERENCE")
        if not self.components:
            raise ScenarioError("BAD_NORMALIZATION", "no components", 1, 1)
        total = math.fsum(c.weight for c in self.components)
        if abs(total - 1.0) > WEIGHT_TOL:
            raise ScenarioError("BAD_NORMALIZATION", f"initial weights sum to {total!r}", 1, 1)
        return Scenario(self.name, tuple(self.observers), tuple(self.components),
                        tuple(self.interactions), tuple(self.envs))


def parse(src: str | bytes) -> Scenario:
    if isinstance(src, bytes):
        try:
            src = src.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ScenarioError("SYNTAX_ERROR", f"not UTF-8 ({exc.reason})", 1, 1) from None
    return _Parser(src).run()


def format_scenario(s: Scenario) -> str:
    lines = [f"scenario {s.name}"]
    if s.observers:
        lines.append("observer " + " ".join(s.observers))
    for c in s.components:
        parts = [f"component {c.id}", f"weight={c.weight!r}"]
        if c.particle != "-":
            parts.append(f"particle={c.particle}")
        if c.detector != "-":
            parts.append(f"detector={c.detector}")
        for b in c.brains:
            parts.append(f"brain={b.observer}:{b.kind.value}" + (f":{b.state}" if b.state else ""))
        lines.append(" ".join(parts))
    for tag, ids in s.envs:
        lines.append(f"env {tag} " + " ".join(ids))
    for it in s.interactions:
        head = f"interact {it.kind.value} window={it.window[0]!r},{it.window[1]!r}"
        if it.observer:
            head += f" observer={it.observer}"
        lines.append(head)
        for f in it.flows:
            prof = f"ramp fraction={f.value!r}" if f.profile == "ramp" else f"const rate={f.value!r}"
            lines.append(f"  flow {f.source} -> {f.target} {prof}")
    return "\n".join(lines) + "\n"


# --- validation -----------------------------------------------------------


@dataclass(frozen=True)
class Diagnostic:
    severity: str  # "violation" or "info"
    code: str
    message: str
    line: int = 0

    def __str__(self):
        return f"{self.severity}: {self.code}: {self.message}" + (f" (line {self.line})" if self.line else "")


def validate(s: Scenario) -> list[Diagnostic]:
    decl = {c.id: c for c in s.components}
    out: list[Diagnostic] = []
    for it in s.interactions:
        for f in it.flows:
            src, tgt = decl[f.source], decl[f.target]
            for b in tgt.brains:
                if b.kind is not BrainKind.CONSCIOUS:
                    continue
                inherited = any(p.observer == b.observer and p.state == b.state for p in src.brains)
                if not inherited:
                    out.append(Diagnostic("violation", "RULE2_CONSCIOUS_CREATION",
                                          f"{f.source} -> {f.target} creates conscious state for {b.observer}", f.line))
            if it.kind is InteractionKind.PHYSIOLOGICAL:
                b = next((x for x in tgt.brains if x.observer == it.observer), None)
                if b is None or b.kind not in (BrainKind.READY, BrainKind.CONSCIOUS):
                    out.append(Diagnostic("violation", "RULE2_NO_READY",
                                          f"{f.source} -> {f.target} leaves {it.observer} without a ready state", f.line))

    state = s.initial_state()
    g = s.graph()
    removed = [e for e in g.edges if is_anomalous(state.get(e.source), state.get(e.target))]
    if removed:
        for e in removed:
            out.append(Diagnostic("info", "RULE4_REMOVED", f"edge {e.source} -> {e.target} removed by rule 4"))
    else:
        out.append(Diagnostic("info", "RULE4_NONE", "no edges removed by rule 4"))

    kept = rule4_filter(g, state)
    reach = {c.id for c in s.components if c.weight > 0}
    frontier = list(reach)
    while frontier:
        cid = frontier.pop()
        for e in kept.outgoing(cid):
            if e.target not in reach:
                reach.add(e.target)
                frontier.append(e.target)
    for c in s.components:
        if c.id not in reach:
            out.append(Diagnostic("info", "UNREACHABLE", f"component {c.id} receives no current", c.line))
    return out


def violations(s: Scenario) -> list[Diagnostic]:
    return [d for d in validate(s) if d.severity == "violation"]


# --- catalog --------------------------------------------------------------

CATALOG = (
    "eq1-detector",
    "eq3-entangled-observer",
    "eq5-terminal-observer",
    "intermediate-observer",
    "outside-terminal-observer",
    "intermediate-outside-observer",
    "drift-consciousness",
    "sequential-interactions",
    "cat-v1",
    "cat-v1-outside",
    "cat-v2",
    "cat-v2-outside",
    "cat-v2-wakeup",
    "nondemolition",
)


def builtin_source(name: str) -> str:
    if name not in CATALOG:
        raise ScenarioError("UNKNOWN_SCENARIO", f"{name!r} is not in the catalog")
    return resources.files("qrules").joinpath(f"catalog/{name}.rsc").read_text(encoding="utf-8")


def builtin(name: str) -> Scenario:
    return parse(builtin_source(name))


def load(ref: str) -> Scenario:
    """Catalog name or path to a ``.rsc`` file."""
    if ref in CATALOG:
        return builtin(ref)
    try:
        with open(ref, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise ScenarioError("UNKNOWN_SCENARIO", f"{ref!r}: {exc.strerror}") from None
    return parse(data)
