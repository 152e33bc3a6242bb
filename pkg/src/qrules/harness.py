"""Outcome distributions under either regime, exact and sampled, and their comparison."""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .rules import RuleSet, apply_hit, rule4_filter, sample_hit
from .scenario import Scenario
from .state import (
    CONSERVATION_TOL,
    ReductionError,
    FlowGraph,
    Superposition,
    evolve_step,
    total_weight,
)

EXACT_TVD_TOL = 1e-9
MC_P_THRESHOLD = 0.01
PRUNE = 1e-12
BRANCH_CAP = 10**7

Acquisition = tuple[str, str, str, str]  # observer, brain state, particle, detector


@dataclass(frozen=True, order=True)
class ObservableRecord:
    """What the observers can know about one run: no env tags, rules or times."""

    acquisitions: tuple[Acquisition, ...]
    final: tuple[str, str, tuple[tuple[str, str, str], ...]]

    def key(self) -> str:
        acq = "; ".join(f"{o}:{st}@{p}/{d}" for o, st, p, d in self.acquisitions) or "-"
        p, d, brains = self.final
        b = ",".join(f"{o}:{st}:{k}" for o, st, k in brains)
        return f"[{acq}] -> {p}/{d}" + (f" {{{b}}}" if b else "")

    def to_json(self) -> dict:
        p, d, brains = self.final
        return {
            "acquisitions": [dict(zip(("observer", "state", "particle", "detector"), a)) for a in self.acquisitions],
            "final": {"particle": p, "detector": d,
                      "brains": [dict(zip(("observer", "state", "kind"), b)) for b in brains]},
        }

    def acquired(self, observer: str, state: str) -> bool:
        return any(a[0] == observer and a[1] == state for a in self.acquisitions)


def project(s: Superposition, acquisitions: tuple[Acquisition, ...]) -> ObservableRecord:
    c = s.get(s.selected)
    brains = tuple(sorted((b.observer, b.state, b.kind.value) for b in c.brains))
    return ObservableRecord(tuple(acquisitions), (c.particle, c.detector, brains))


@dataclass
class OutcomeDistribution:
    probs: dict[ObservableRecord, float]
    counts: dict[ObservableRecord, int] | None = None
    n: int | None = None
    discretization_bound: float | None = None
    pruned: float = 0.0
    timing: dict[ObservableRecord, float] | None = None

    def __len__(self):
        return len(self.probs)

    def get(self, rec: ObservableRecord) -> float:
        return self.probs.get(rec, 0.0)

    def total(self) -> float:
        return math.fsum(self.probs.values())

    def where(self, pred) -> float:
        return math.fsum(p for r, p in self.probs.items() if pred(r))

    def rows(self) -> list[tuple[str, float]]:
        return sorted(((r.key(), p) for r, p in self.probs.items()), key=lambda x: (-x[1], x[0]))

    def to_json(self) -> dict:
        out = {
            "outcomes": [
                {"record": r.to_json(), "key": r.key(), "probability": p,
                 **({"count": self.counts.get(r, 0)} if self.counts is not None else {})}
                for r, p in sorted(self.probs.items(), key=lambda kv: (-kv[1], kv[0].key()))
            ],
        }
        if self.n is not None:
            out["trials"] = self.n
        if self.discretization_bound is not None:
            out["discretization_bound"] = self.discretization_bound
        if self.pruned:
            out["pruned_mass"] = self.pruned
        return out

    def to_csv(self) -> str:
        lines = ["record,probability"]
        for key, p in self.rows():
            lines.append('"' + key.replace('"', '""') + f'",{p!r}')
        return "\n".join(lines) + "\n"


class Mode(enum.Enum):
    EXACT = "exact"
    MC = "mc"


@dataclass(frozen=True)
class ComparisonVerdict:
    total_variation: float
    chi_square_p: float | None
    equal: bool
    mode: Mode

    def to_json(self) -> dict:
        return {"mode": self.mode.value, "total_variation": self.total_variation,
                "chi_square_p": self.chi_square_p, "equal": self.equal}


def total_variation(a: OutcomeDistribution, b: OutcomeDistribution) -> float:
    keys = set(a.probs) | set(b.probs)
    return 0.5 * math.fsum(abs(a.get(k) - b.get(k)) for k in keys)


def compare(
    a: OutcomeDistribution,
    b: OutcomeDistribution,
    mode: Mode = Mode.EXACT,
    tvd_tol: float = EXACT_TVD_TOL,
    p_threshold: float = MC_P_THRESHOLD,
) -> ComparisonVerdict:
    if not a.probs or not b.probs:
        raise ReductionError("EMPTY_DISTRIBUTION")
    tvd = total_variation(a, b)
    if mode is Mode.EXACT:
        return ComparisonVerdict(tvd, None, tvd <= tvd_tol, mode)
    if a.counts is None or b.counts is None:
        raise ReductionError("EMPTY_DISTRIBUTION", "MC comparison needs sampled counts")
    keys = sorted(set(a.counts) | set(b.counts))
    table = np.array([[a.counts.get(k, 0) for k in keys], [b.counts.get(k, 0) for k in keys]])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        p = 1.0
    else:
        p = float(stats.chi2_contingency(table, correction=False).pvalue)
    return ComparisonVerdict(tvd, p, p >= p_threshold, mode)


def prepared(s: Scenario, rules: RuleSet) -> tuple[Superposition, FlowGraph]:
    state = s.initial_state()
    g = s.graph()
    if rules.rule4:
        g = rule4_filter(g, state)
    return state, g


# --- exact enumeration ----------------------------------------------------


def _slices(g, t0: float, k: int) -> list[tuple[float, float]]:
    points = sorted({t0, *g.breakpoints()})
    out = []
    for a, b in zip(points, points[1:]):
        edges = np.linspace(a, b, k + 1)
        out.extend(zip(edges[:-1], edges[1:]))
    return out


def _branch_key(s: Superposition, acq) -> tuple:
    labels = tuple((c.id, c.brains) for c in s.components)
    return (s.selected, s.alive_ids(), labels, acq)


def _enumerate(s: Scenario, rules: RuleSet, k: int, cap: int) -> tuple[dict, float]:
    state0, g = prepared(s, rules)
    out_edges = {cid: g.outgoing(cid) for cid in state0.ids}
    branches: dict[tuple, list] = {}
    for c in state0.components:
        if c.weight > 0:
            st = replace(state0, selected=c.id)
            branches[_branch_key(st, ())] = [c.weight, st, ()]
    pruned = 0.0
    for a, b in _slices(g, state0.time, k):
        nxt: dict[tuple, list] = {}

        def add(p, st, acq):
            key = _branch_key(st, acq)
            if key in nxt:
                nxt[key][0] += p
            else:
                nxt[key] = [p, st, acq]

        for p, st, acq in branches.values():
            lam = [(e, e.profile.integral(a, b)) for e in out_edges[st.selected]]
            lam = [(e, x) for e, x in lam if x > 0]
            if not lam:
                add(p, st, acq)
                continue
            infinite = [e for e, x in lam if math.isinf(x)]
            if infinite:
                stay, shares = 0.0, [(e, 1.0 / len(infinite)) for e in infinite]
            else:
                total = math.fsum(x for _, x in lam)
                stay = math.exp(-total)
                shares = [(e, -math.expm1(-total) * x / total) for e, x in lam]
            if stay > 0:
                add(p * stay, st, acq)
            for e, share in shares:
                q = p * share
                if q < PRUNE:
                    pruned += q
                    continue
                hit = apply_hit(st, rules, e.target, 0.5 * (a + b))
                add(q, hit.state, acq + tuple(hit.acquisitions))
        branches = nxt
        if len(branches) > cap:
            raise ReductionError("STATE_EXPLOSION", f"{len(branches)} branches exceed cap {cap}")
    probs: dict[ObservableRecord, float] = {}
    for p, st, acq in branches.values():
        rec = project(st, acq)
        probs[rec] = probs.get(rec, 0.0) + p
    return probs, pruned


def enumerate_outcomes(
    s: Scenario,
    rules: RuleSet,
    time_slices: int = 64,
    cap: int = BRANCH_CAP,
    richardson: bool = True,
) -> OutcomeDistribution:
    """Exact outcome law, up to time discretisation, by branching every slice.

    Each slice allows at most one hit; its probability ``1 - exp(-Lambda)``
    uses the exact integrated rate.  With ``richardson`` the run is repeated
    at twice the slices and the largest change is reported as the bound.
    """
    if time_slices < 1:
        raise ReductionError("BAD_SLICES", repr(time_slices))
    probs, pruned = _enumerate(s, rules, time_slices, cap)
    bound = None
    if richardson:
        fine, _ = _enumerate(s, rules, 2 * time_slices, cap)
        bound = max((abs(probs.get(r, 0.0) - fine.get(r, 0.0)) for r in set(probs) | set(fine)), default=0.0)
    return OutcomeDistribution(probs, discretization_bound=bound, pruned=pruned)


# --- Monte Carlo ----------------------------------------------------------


def _sample_paths(state0: Superposition, g, n: int, rng: np.random.Generator):
    ids = state0.ids
    index = {cid: i for i, cid in enumerate(ids)}
    weights = np.array([c.weight for c in state0.components])
    sel = rng.choice(len(ids), size=n, p=weights / weights.sum())
    t = np.full(n, state0.time)
    hops = [sel.copy()]
    times = [t.copy()]
    out = {index[cid]: [(index[e.target], e.profile) for e in g.outgoing(cid)] for cid in ids}
    active = np.ones(n, dtype=bool)
    while active.any():
        nxt = np.full(n, -1)
        tnext = np.full(n, np.inf)
        for ci, edges in out.items():
            m = active & (sel == ci)
            if not edges or not m.any():
                continue
            tt = t[m]
            best_t = np.full(tt.shape, np.inf)
            best_j = np.full(tt.shape, -1)
            for tj, prof in edges:
                h = prof.next_hit(tt, rng.exponential(size=tt.shape))
                better = h < best_t
                best_t = np.where(better, h, best_t)
                best_j = np.where(better, tj, best_j)
            nxt[m] = best_j
            tnext[m] = best_t
        hit = np.isfinite(tnext)
        sel = np.where(hit, nxt, sel)
        t = np.where(hit, tnext, t)
        hops.append(np.where(hit, nxt, -1))
        times.append(np.where(hit, tnext, np.nan))
        active = hit
    return ids, np.stack(hops, axis=1), np.stack(times, axis=1)


def _replay(state0: Superposition, rules: RuleSet, ids, path) -> tuple[Superposition, tuple]:
    st = replace(state0, selected=ids[path[0]])
    acq: tuple = ()
    for j in path[1:]:
        if j < 0:
            break
        hit = apply_hit(st, rules, ids[j], st.time)
        st, acq = hit.state, acq + tuple(hit.acquisitions)
    return st, acq


def run_trials(
    s: Scenario,
    rules: RuleSet,
    n: int,
    seed: int = 0,
    include_timing: bool = False,
) -> OutcomeDistribution:
    """``n`` continuous-time runs; deterministic given ``(n, seed)``.

    Realised-branch paths are drawn in one vectorised batch; the rules are
    then replayed once per distinct path.
    """
    if n < 1:
        raise ReductionError("BAD_TRIALS", repr(n))
    state0, g = prepared(s, rules)
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    ids, paths, times = _sample_paths(state0, g, n, rng)
    uniq, inverse, counts = np.unique(paths, axis=0, return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    by_record: Counter = Counter()
    rec_of = []
    for row, c in zip(uniq, counts):
        st, acq = _replay(state0, rules, ids, row)
        rec = project(st, acq)
        rec_of.append(rec)
        by_record[rec] += int(c)
    dist = OutcomeDistribution({r: c / n for r, c in by_record.items()}, counts=dict(by_record), n=n)
    if include_timing:
        last = np.nanmax(np.where(np.isnan(times[:, 1:]), -np.inf, times[:, 1:]), axis=1) if times.shape[1] > 1 else np.full(n, -np.inf)
        timing = {}
        for u, rec in enumerate(rec_of):
            m = (inverse == u) & np.isfinite(last)
            if m.any():
                timing.setdefault(rec, []).append(last[m])
        dist.timing = {r: float(np.concatenate(v).mean()) for r, v in timing.items()}
    return dist


# --- single run with weights ----------------------------------------------


@dataclass
class RunResult:
    record: ObservableRecord
    events: list = field(default_factory=list)
    state: Superposition | None = None
    max_drift: float = 0.0  # largest |total weight - 1| seen between reductions


def simulate(s: Scenario, rules: RuleSet, seed: int = 0, steps_per_window: int = 1000) -> RunResult:
    """One run with forward-Euler weights, hits and reductions, fully logged."""
    state, g = prepared(s, rules)
    rng = np.random.default_rng(seed)
    end = s.end_time()
    dt_max = min((b - a for a, b in (e.window for e in g.edges)), default=end - state.time) / steps_per_window
    acq: tuple = ()
    events = []
    drift = 0.0
    while state.time < end:
        ev = sample_hit(state, g, (state.time, end), rng)
        stop = ev.time if ev is not None else end
        while state.time < stop:
            dt = min(dt_max, stop - state.time)
            if dt <= 1e-15:
                state = replace(state, time=stop)
                break
            state = evolve_step(state, g, dt)
            drift = max(drift, abs(total_weight(state) - 1.0))
        if ev is None:
            break
        hit = apply_hit(state, rules, ev.chosen, ev.time)
        state, acq = hit.state, acq + tuple(hit.acquisitions)
        drift = max(drift, abs(total_weight(state) - 1.0))
        events.append(hit.event)
    return RunResult(project(state, acq), events, state, drift)


def conservation_ok(result: RunResult) -> bool:
    return result.max_drift <= CONSERVATION_TOL
