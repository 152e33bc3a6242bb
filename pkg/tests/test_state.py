import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from qrules.state import (
    CONSERVATION_TOL,
    BrainKind,
    BrainLabel,
    Component,
    Constant,
    FlowEdge,
    FlowGraph,
    Ramp,
    ReductionError,
    Superposition,
    check_normalized,
    evolve_step,
    make_superposition,
    total_weight,
    zero_others,
)


def two_state(fraction=1.0):
    s = make_superposition([Component("a", 1.0), Component("b", 0.0, alive=False)])
    g = FlowGraph((FlowEdge("a", "b", Ramp(0.0, 1.0, fraction)),))
    return s, g


def run_until(s, g, t_end, dt):
    while s.time < t_end - 1e-12:
        s = evolve_step(s, g, min(dt, t_end - s.time))
    return s


# --- rate profiles --------------------------------------------------------


@pytest.mark.parametrize("fraction", [0.25, 0.5, 0.9])
@pytest.mark.parametrize("a,b", [(0.0, 0.5), (0.2, 0.9), (-1.0, 0.3), (0.7, 2.0)])
def test_ramp_integral_matches_quadrature(fraction, a, b):
    r = Ramp(0.0, 1.0, fraction)
    expected, _ = integrate.quad(r, a, b, points=[0.0, 1.0], limit=200)
    assert r.integral(a, b) == pytest.approx(expected, rel=1e-9, abs=1e-12)


def test_full_ramp_integral_diverges_at_end():
    r = Ramp(0.0, 1.0, 1.0)
    assert math.isinf(r.integral(0.5, 1.0))
    assert math.isfinite(r.integral(0.0, 0.999))


@pytest.mark.parametrize("a,b", [(0.0, 1.0), (0.5, 3.0), (-2.0, -1.0)])
def test_constant_integral_matches_quadrature(a, b):
    c = Constant(1.7, 0.0, 2.0)
    expected, _ = integrate.quad(c, a, b, points=[0.0, 2.0])
    assert c.integral(a, b) == pytest.approx(expected, abs=1e-12)


@given(
    t0=st.floats(0.0, 0.95),
    e=st.floats(1e-6, 5.0),
    fraction=st.floats(0.05, 1.0),
)
def test_ramp_next_hit_inverts_integral(t0, e, fraction):
    r = Ramp(0.0, 1.0, fraction)
    t = float(r.next_hit(t0, e))
    if math.isinf(t):
        assert r.integral(t0, 1.0) <= e + 1e-9
    else:
        assert t0 <= t < 1.0
        assert r.integral(t0, t) == pytest.approx(e, rel=1e-6, abs=1e-9)


def test_constant_next_hit_vectorized():
    c = Constant(2.0, 1.0, 3.0)
    t = c.next_hit(np.array([0.0, 2.0, 3.5]), np.array([1.0, 1.0, 0.1]))
    assert t[0] == pytest.approx(1.5)
    assert t[1] == pytest.approx(2.5)
    assert math.isinf(t[2])


# --- components -----------------------------------------------------------


def test_brain_label_refuses_backward_transition():
    b = BrainLabel("k", BrainKind.CONSCIOUS, "B1")
    with pytest.raises(ReductionError) as err:
        b.with_kind(BrainKind.READY)
    assert err.value.code == "BAD_TRANSITION"
    assert BrainLabel("k", BrainKind.READY).with_kind(BrainKind.CONSCIOUS).kind is BrainKind.CONSCIOUS


def test_component_defaults_env_to_id_and_rejects_duplicates():
    assert Component("c1", 0.5).env == "c1"
    with pytest.raises(ReductionError):
        Component("c", 0.1, brains=(BrainLabel("k", BrainKind.READY), BrainLabel("k", BrainKind.READY)))
    with pytest.raises(ReductionError):
        Superposition((Component("a", 0.5), Component("a", 0.5)))


def test_make_superposition_selects_heaviest():
    s = make_superposition([Component("a", 0.3), Component("b", 0.7)])
    assert s.selected == "b"


def test_check_normalized():
    with pytest.raises(ReductionError) as err:
        check_normalized(Superposition((Component("a", 0.5),)))
    assert err.value.code == "UNNORMALIZED_INPUT"
    check_normalized(Superposition((Component("a", 0.5 + 5e-7), Component("b", 0.5))))


# --- evolution ------------------------------------------------------------


def test_evolve_step_rejects_nonpositive_dt():
    s, g = two_state()
    for dt in (0.0, -0.1):
        with pytest.raises(ReductionError) as err:
            evolve_step(s, g, dt)
        assert err.value.code == "NEGATIVE_DT"


@pytest.mark.parametrize("fraction", [0.4, 1.0])
def test_isolated_ramp_moves_weight_linearly(fraction):
    # Closed form: w_a(t) = 1 - fraction * t on [0, 1].
    s, g = two_state(fraction)
    for t in (0.25, 0.5, 0.75):
        out = run_until(s, g, t, 1e-4)
        assert out.get("a").weight == pytest.approx(1 - fraction * t, abs=1e-3)
        assert total_weight(out) == pytest.approx(1.0, abs=CONSERVATION_TOL)


def test_full_ramp_empties_source():
    s, g = two_state(1.0)
    out = run_until(s, g, 1.0, 1e-3)
    assert out.get("a").weight == pytest.approx(0.0, abs=1e-12)
    assert out.get("b").weight == pytest.approx(1.0, abs=1e-12)
    assert out.get("b").alive


def test_target_revived_by_inflow():
    s, g = two_state()
    out = evolve_step(s, g, 0.01)
    assert out.get("b").alive and out.get("b").weight > 0


def test_zero_others():
    s = make_superposition([Component("a", 0.4), Component("b", 0.6)])
    out = zero_others(s, "a")
    assert out.get("a").weight == 1.0 and not out.get("b").alive
    with pytest.raises(ReductionError) as err:
        zero_others(out, "b")
    assert err.value.code == "DEAD_COMPONENT"


@st.composite
def graphs(draw):
    n = draw(st.integers(2, 5))
    raw = draw(st.lists(st.floats(0.01, 1.0), min_size=n, max_size=n))
    total = sum(raw)
    comps = [Component(f"c{i}", w / total) for i, w in enumerate(raw)]
    edges = []
    for _ in range(draw(st.integers(1, 6))):
        a, b = draw(st.integers(0, n - 1)), draw(st.integers(0, n - 1))
        if a == b:
            continue
        t0 = draw(st.floats(0.0, 0.5))
        if draw(st.booleans()):
            prof = Ramp(t0, t0 + draw(st.floats(0.1, 1.0)), draw(st.floats(0.0, 1.0)))
        else:
            prof = Constant(draw(st.floats(0.0, 50.0)), t0, t0 + 1.0)
        edges.append(FlowEdge(f"c{a}", f"c{b}", prof))
    return Superposition(tuple(comps)), FlowGraph(tuple(edges))


@settings(max_examples=200, deadline=None)
@given(graphs(), st.floats(1e-4, 0.2))
def test_evolution_conserves_weight(sg, dt):
    s, g = sg
    for _ in range(10):
        s = evolve_step(s, g, dt)
        assert abs(total_weight(s) - 1.0) <= CONSERVATION_TOL
        assert all(c.weight >= 0 for c in s.components)
