"""Amplitude-level model of the nondemolition spin-pair experiment.

State layout is a complex array with axes ``(s1, s2, m1, m2, eO, eP)``:
spins (0 = up, 1 = down), the two detector registers (size ``d``), and two
readout environments that are blank (0) until the detector/detector events
O and P write ``1 + value`` into them.

The detector registers are jointly prepared as ``sum_m |m>|M - m>``; the
first contact shifts ``m1`` by ``+1/-1`` for spin up/down, the second shifts
``m2`` the same way, so the pair sum returns to ``M`` in both singlet
branches.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .harness import ObservableRecord, OutcomeDistribution
from .rules import Regime, RuleSet
from .state import ReductionError

UP, DOWN = 0, 1
EVENTS = ("O", "A", "B", "P")
NORM_TOL = 1e-12
ORTHOGONAL_TOL = 1e-9
_SPIN = {UP: "↑", DOWN: "↓"}
AXES = {"s1": 0, "s2": 1, "m1": 2, "m2": 3, "eO": 4, "eP": 5}


@dataclass(frozen=True)
class DetectorPrep:
    register_size: int = 5
    correlation_sum: int = 0
    support: int | None = None  # number of admissible m values; default all
    cyclic: bool = True

    def pairs(self) -> list[tuple[int, int]]:
        d, M = self.register_size, self.correlation_sum
        if d < 5:
            raise ReductionError("REGISTER_TOO_SMALL", f"d={d} < 5")
        if self.cyclic:
            k = d if self.support is None else self.support
            if not 1 <= k <= d:
                raise ReductionError("REGISTER_TOO_SMALL", f"support {k} for d={d}")
            return [(m, (M - m) % d) for m in range(k)]
        # Interior values only, so +-1 shifts stay inside the register.
        inner = [m for m in range(1, d - 1) if 1 <= M - m <= d - 2]
        k = len(inner) if self.support is None else self.support
        if k < 1 or len(inner) < k:
            raise ReductionError("REGISTER_TOO_SMALL", f"{len(inner)} interior values, need {k}")
        return [(m, M - m) for m in inner[:k]]

    def detector_state(self) -> np.ndarray:
        d = self.register_size
        pairs = self.pairs()
        out = np.zeros((d, d), dtype=complex)
        for m1, m2 in pairs:
            out[m1, m2] = 1 / math.sqrt(len(pairs))
        return out


@dataclass
class SpinPairState:
    amps: np.ndarray
    prep: DetectorPrep

    @property
    def d(self) -> int:
        return self.prep.register_size

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def copy(self) -> "SpinPairState":
        return SpinPairState(self.amps.copy(), self.prep)

    def to_json(self, tol: float = 1e-15) -> dict[str, list[float]]:
        """Basis label -> ``[re, im]`` for every nonzero amplitude."""
        out = {}
        for idx in zip(*np.nonzero(np.abs(self.amps) > tol)):
            s1, s2, m1, m2, eo, ep = (int(i) for i in idx)
            label = f"{_SPIN[s1]}{_SPIN[s2]}|m1={m1},m2={m2}|eO={eo},eP={ep}"
            a = self.amps[idx]
            out[label] = [float(a.real), float(a.imag)]
        return out


def singlet() -> np.ndarray:
    v = np.zeros((2, 2), dtype=complex)
    v[UP, DOWN] = 1 / math.sqrt(2)
    v[DOWN, UP] = -1 / math.sqrt(2)
    return v


def _assemble(spins: np.ndarray, det: np.ndarray, d: int) -> np.ndarray:
    env = np.zeros((d + 1, d + 1), dtype=complex)
    env[0, 0] = 1.0
    return np.einsum("ab,cd,ef->abcdef", spins, det, env)


def pre_preparation(prep: DetectorPrep = DetectorPrep()) -> SpinPairState:
    """Singlet with uncorrelated, uniformly spread detector registers (before O)."""
    d = prep.register_size
    prep.pairs()
    det = np.full((d, d), 1.0 / d, dtype=complex)
    return SpinPairState(_assemble(singlet(), det, d), prep)


def prepare(prep: DetectorPrep = DetectorPrep()) -> SpinPairState:
    """Singlet times the jointly prepared detector pair, environments blank."""
    return SpinPairState(_assemble(singlet(), prep.detector_state(), prep.register_size), prep)


def _check_sector(state: SpinPairState) -> None:
    parallel = np.sum(np.abs(state.amps[UP, UP]) ** 2 + np.abs(state.amps[DOWN, DOWN]) ** 2)
    if parallel > NORM_TOL:
        raise ReductionError("NOT_SINGLET_SECTOR", f"parallel-spin weight {parallel:.3g}")


def _shift(state: SpinPairState, spin_axis: int, reg_axis: int) -> SpinPairState:
    # Register moves +1 where the controlling spin is up, -1 where down.
    amps = state.amps
    out = np.empty_like(amps)
    for spin, step in ((UP, 1), (DOWN, -1)):
        sl = [slice(None)] * amps.ndim
        sl[spin_axis] = spin
        part = amps[tuple(sl)]
        axis = reg_axis - 1  # one axis fewer after fixing the spin
        if not state.prep.cyclic:
            edge = [slice(None)] * part.ndim
            edge[axis] = -1 if step > 0 else 0
            if np.any(np.abs(part[tuple(edge)]) > NORM_TOL):
                raise ReductionError("SHIFT_OUT_OF_RANGE", f"register axis {reg_axis}")
        out[tuple(sl)] = np.roll(part, step, axis=axis)
    return SpinPairState(out, state.prep)


def interact_A(state: SpinPairState) -> SpinPairState:
    _check_sector(state)
    return _shift(state, AXES["s1"], AXES["m1"])


def interact_B(state: SpinPairState) -> SpinPairState:
    _check_sector(state)
    return _shift(state, AXES["s2"], AXES["m2"])


def _record(state: SpinPairState, env_axis: int, value_of) -> SpinPairState:
    """Write ``1 + value_of(m1, m2)`` into a blank environment register."""
    amps = state.amps
    sl = [slice(None)] * amps.ndim
    sl[env_axis] = slice(1, None)
    if np.any(np.abs(amps[tuple(sl)]) > NORM_TOL):
        raise ReductionError("ENV_NOT_BLANK", f"axis {env_axis}")
    axes = [AXES["m1"], AXES["m2"], env_axis]
    src = np.moveaxis(amps, axes, [0, 1, 2])
    out = np.zeros_like(src)
    m1, m2 = np.meshgrid(np.arange(state.d), np.arange(state.d), indexing="ij")
    out[m1, m2, 1 + value_of(m1, m2)] = src[m1, m2, 0]
    return SpinPairState(np.moveaxis(out, [0, 1, 2], axes), state.prep)


def interact_O(state: SpinPairState) -> SpinPairState:
    """Detector/detector contact: the pair sum is recorded in environment O."""
    d = state.d
    return _record(state, AXES["eO"], lambda m1, m2: (m1 + m2) % d)


def interact_P(state: SpinPairState) -> SpinPairState:
    """Detectors reunited: the joined register configuration is recorded in environment P."""
    return _record(state, AXES["eP"], lambda m1, m2: m1)


_INTERACTIONS = {"O": interact_O, "A": interact_A, "B": interact_B, "P": interact_P}
# Which axis labels the branches of each event, and which subsystem is local to it.
_POINTER = {"O": "eO", "A": "s1", "B": "s2", "P": "eP"}
_LOCAL = {"O": "eO", "A": "m1", "B": "m2", "P": "eP"}


def reduced_density(amps: np.ndarray, keep: tuple[int, ...]) -> np.ndarray:
    rest = tuple(i for i in range(amps.ndim) if i not in keep)
    mat = np.transpose(amps, keep + rest)
    dim = int(np.prod([amps.shape[i] for i in keep]))
    mat = mat.reshape(dim, -1)
    return mat @ mat.conj().T


def _psd_sqrt(rho: np.ndarray) -> np.ndarray:
    w, v = linalg.eigh(rho)
    return (v * np.sqrt(np.clip(w, 0.0, None))) @ v.conj().T


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Uhlmann fidelity of two density matrices."""
    r = _psd_sqrt(rho)
    w = linalg.eigvalsh(r @ sigma @ r)
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)


def branch_states(state: SpinPairState, event: str) -> dict[int, tuple[float, np.ndarray]]:
    """Pointer value -> (probability, local reduced state) just after ``event``."""
    if event not in _INTERACTIONS:
        raise ReductionError("UNKNOWN_EVENT", repr(event))
    after = _INTERACTIONS[event](state).amps
    pointer, local = AXES[_POINTER[event]], AXES[_LOCAL[event]]
    out = {}
    for v in range(after.shape[pointer]):
        part = np.take(after, v, axis=pointer)
        p = float(np.sum(np.abs(part) ** 2))
        if p <= NORM_TOL:
            continue
        if local == pointer:
            rho = np.zeros((after.shape[pointer],) * 2, dtype=complex)
            rho[v, v] = 1.0
        else:
            keep = local - 1 if local > pointer else local
            rho = reduced_density(part, (keep,)) / p
        out[v] = (p, rho)
    return out


def branch_overlaps(state: SpinPairState, event: str) -> np.ndarray:
    branches = list(branch_states(state, event).values())
    n = len(branches)
    out = np.ones((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = fidelity(branches[i][1], branches[j][1])
    return out


def rule1a_eligibility(state: SpinPairState, event: str) -> bool:
    """Whether the branches formed at ``event`` are locally incoherent.

    ``state`` is the state just before the event.  The branches are the
    values of the event's pointer (recorded sum at O, particle spin at A/B,
    recorded configuration at P); their local reduced states must be
    pairwise orthogonal.
    """
    key = (event, state.prep, state.amps.shape, state.amps.tobytes())
    if key not in _ELIGIBLE:
        _ELIGIBLE[key] = _eligible(state, event)
    return _ELIGIBLE[key]


_ELIGIBLE: dict[tuple, bool] = {}


def _eligible(state: SpinPairState, event: str) -> bool:
    ov = branch_overlaps(state, event)
    if ov.shape[0] < 2:
        return False
    off = ov[~np.eye(ov.shape[0], dtype=bool)]
    return bool(np.all(off < ORTHOGONAL_TOL))


def _project(state: SpinPairState, axis: int, value: int) -> SpinPairState:
    out = np.zeros_like(state.amps)
    sl = [slice(None)] * out.ndim
    sl[axis] = value
    out[tuple(sl)] = state.amps[tuple(sl)]
    return SpinPairState(out / np.linalg.norm(out), state.prep)


def _pointer_probs(state: SpinPairState, axis: int) -> np.ndarray:
    other = tuple(i for i in range(state.amps.ndim) if i != axis)
    return np.sum(np.abs(state.amps) ** 2, axis=other)


def _feedforward(state: SpinPairState, recorded_sum: int) -> SpinPairState:
    # Shift register 2 so the pair sum becomes the prescribed M.
    step = (state.prep.correlation_sum - recorded_sum) % state.d
    return SpinPairState(np.roll(state.amps, step, axis=AXES["m2"]), state.prep)


def singlet_fidelity(state: SpinPairState) -> float:
    """Fidelity of the spin-detector state with singlet times the prepared pair."""
    target = np.einsum("ab,cd->abcd", singlet(), state.prep.detector_state()).reshape(-1)
    rho = reduced_density(state.amps, (0, 1, 2, 3))
    return float(np.real(target.conj() @ rho @ target))


def singlet_probability(state: SpinPairState) -> float:
    s = singlet().reshape(-1)
    rho = reduced_density(state.amps, (0, 1))
    return float(np.real(s.conj() @ rho @ s))


def sum_distribution(state: SpinPairState) -> np.ndarray:
    d = state.d
    joint = np.sum(np.abs(state.amps) ** 2, axis=(0, 1, 4, 5))
    out = np.zeros(d)
    for m1 in range(d):
        for m2 in range(d):
            out[(m1 + m2) % d] += joint[m1, m2]
    return out


def detector_entropy(state: SpinPairState, which: str = "sum") -> float:
    """Shannon entropy (nats) of the pair sum, or von Neumann entropy of one register."""
    if which == "sum":
        p = sum_distribution(state)
    else:
        p = np.linalg.eigvalsh(reduced_density(state.amps, (AXES[which],)))
    p = p[p > 1e-15]
    return float(-np.sum(p * np.log(p)) + 0.0)


# --- protocol -------------------------------------------------------------


@dataclass
class NondemolitionRun:
    record: ObservableRecord
    fidelity_after_B: float
    eligibility: dict[str, bool]
    events: list[dict] = field(default_factory=list)
    snapshots: dict[str, dict] = field(default_factory=dict)
    norms: dict[str, float] = field(default_factory=dict)


def _reduces(regime: Regime, event: str, eligible: bool, force: frozenset[str]) -> tuple[bool, str | None]:
    if event in force:
        return True, "1a"
    if regime is Regime.OBSERVER:
        return (event in ("O", "P"), "3" if event in ("O", "P") else None)
    return (eligible, "1a" if eligible else None)


def _walk(prep, regime, force, choose, snapshots=True):
    """Generate ``(probability, run)`` along the O-A-B-P protocol.

    ``choose(probs)`` yields the branch indices to follow: all of them for
    exact enumeration, one sampled index for a single run.
    """

    def step(state, i, prob, run):
        if i == len(EVENTS):
            yield from finish(state, prob, run)
            return
        ev = EVENTS[i]
        eligible = rule1a_eligibility(state, ev)
        run.eligibility[ev] = eligible
        after = _INTERACTIONS[ev](state)
        run.norms[ev] = after.norm()
        reduce, rule = _reduces(regime, ev, eligible, force)
        if ev == "B":
            run.fidelity_after_B = singlet_fidelity(after)
        if not reduce:
            run.events.append({"event": ev, "eligible": eligible, "reduced": False})
            if snapshots:
                run.snapshots[ev] = after.to_json()
            yield from step(after, i + 1, prob, run)
            return
        axis = AXES[_POINTER[ev]]
        probs = _pointer_probs(after, axis)
        for v in choose(probs):
            nxt = _project(after, axis, v)
            if ev == "O":
                nxt = _feedforward(nxt, v - 1)
            branch = _fork(run)
            branch.events.append({"event": ev, "eligible": eligible, "reduced": True, "rule": rule, "value": int(v)})
            if snapshots:
                branch.snapshots[ev] = nxt.to_json()
            yield from step(nxt, i + 1, prob * probs[v], branch)

    def finish(state, prob, run):
        p0 = singlet_probability(state)
        sums = sum_distribution(state)
        outcomes = np.array([p0, 1.0 - p0])
        for oi in choose(outcomes):
            j2 = "J2=0" if oi == 0 else "J2=2"
            for s in choose(sums):
                det = "D11" if s == prep.correlation_sum % prep.register_size else f"D11[sum={s}]"
                rec = ObservableRecord(
                    (("k", "BO", "-", "D00"), ("k", "BP", j2, det)),
                    (j2, det, (("k", "BP", "conscious"),)),
                )
                done = _fork(run)
                done.record = rec
                yield prob * outcomes[oi] * sums[s], done

    start = pre_preparation(prep)
    blank = NondemolitionRun(None, float("nan"), {})
    yield from step(start, 0, 1.0, blank)


def _fork(run: NondemolitionRun) -> NondemolitionRun:
    return NondemolitionRun(run.record, run.fidelity_after_B, dict(run.eligibility),
                            list(run.events), dict(run.snapshots), dict(run.norms))


def _all(probs):
    return [i for i, p in enumerate(probs) if p > NORM_TOL]


def run_nondemolition(
    rules: RuleSet | Regime,
    seed: int = 0,
    prep: DetectorPrep = DetectorPrep(),
    force_reduction: frozenset[str] | set[str] = frozenset(),
    snapshots: bool = True,
) -> NondemolitionRun:
    """One seeded pass through O, A, B, P.

    ``force_reduction`` names events where a rule-1a reduction is imposed
    regardless of eligibility; it exists to show the harness detects
    demolition.
    """
    regime = rules.regime if isinstance(rules, RuleSet) else rules
    force = frozenset(force_reduction)
    unknown = force - set(EVENTS)
    if unknown:
        raise ReductionError("UNKNOWN_EVENT", ", ".join(sorted(unknown)))
    rng = np.random.default_rng(seed)

    def choose(probs):
        p = np.clip(np.asarray(probs, dtype=float), 0.0, None)
        return [int(rng.choice(len(p), p=p / p.sum()))]

    _, run = next(_walk(prep, regime, force, choose, snapshots))
    return run


def nondemolition_distribution(
    rules: RuleSet | Regime,
    prep: DetectorPrep = DetectorPrep(),
    force_reduction: frozenset[str] | set[str] = frozenset(),
) -> OutcomeDistribution:
    regime = rules.regime if isinstance(rules, RuleSet) else rules
    probs: dict[ObservableRecord, float] = {}
    for p, run in _walk(prep, regime, frozenset(force_reduction), _all, False):
        probs[run.record] = probs.get(run.record, 0.0) + float(p)
    return OutcomeDistribution(probs)
