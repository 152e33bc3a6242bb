import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fuzzing import fuzz
from qrules.scenario import (
    CATALOG,
    ComponentDecl,
    Flow,
    Interaction,
    InteractionKind,
    Scenario,
    ScenarioError,
    builtin,
    builtin_source,
    format_scenario,
    load,
    parse,
    validate,
    violations,
)
from qrules.state import BrainKind, BrainLabel, Ramp

MINIMAL = """\
scenario tiny
component c1 weight=1 detector=D0
component c2 detector=D1
interact particle-detector window=0,1
  flow c1 -> c2 ramp
"""


def test_minimal_parse():
    s = parse(MINIMAL)
    assert s.name == "tiny"
    assert [c.id for c in s.components] == ["c1", "c2"]
    (it,) = s.interactions
    assert it.kind is InteractionKind.PARTICLE_DETECTOR and it.window == (0.0, 1.0)
    assert it.flows == (Flow("c1", "c2", "ramp", 1.0),)
    (edge,) = s.graph().edges
    assert edge.profile == Ramp(0.0, 1.0, 1.0)


def test_comments_and_blank_lines_ignored():
    text = "# header\n\n" + MINIMAL.replace("ramp", "ramp  # trailing") + "\n# end\n"
    assert parse(text) == parse(MINIMAL)


def test_env_tags_shape_initial_state():
    s = parse(MINIMAL + "env shared c1 c2\n")
    st0 = s.initial_state()
    assert st0.get("c1").env == st0.get("c2").env == "shared"
    assert parse(MINIMAL).initial_state().get("c2").env == "c2"


@pytest.mark.parametrize(
    "text,code,line",
    [
        ("scenario x\ncomponent c1 weight=0.5\n", "BAD_NORMALIZATION", 1),
        ("scenario x\ncomponent c1 weight=-1\n", "BAD_NORMALIZATION", 2),
        ("scenario x\ncomponent c1 weight=1\ncomponent c1\n", "DUPLICATE_ID", 3),
        ("scenario x\ncomponent c1 weight=1\ninteract particle-detector window=0,1\n  flow c1 -> c9 ramp\n",
         "UNKNOWN_REFERENCE", 4),
        ("scenario x\ncomponent c1 weight=1\ncomponent c2\ninteract particle-detector window=0,1\n"
         "  flow c1 -> c2 const rate=-2\n", "NEGATIVE_RATE", 5),
        ("scenario x\ncomponent c1 weight=1 brain=j:ready\n", "UNKNOWN_REFERENCE", 2),
        ("scenario x\ncomponent c1 weight=1\nteleport c1\n", "SYNTAX_ERROR", 3),
        ("component c1 weight=1\n", "SYNTAX_ERROR", 1),
        ("scenario x\ncomponent c1 weight=1\ninteract physiological window=0,1\n  flow c1 -> c1 ramp\n",
         "SYNTAX_ERROR", 3),
        ("scenario x\ncomponent c1 weight=1\ncomponent c2\nenv a c1\nenv b c1 c2\n", "DUPLICATE_ID", 5),
    ],
)
def test_errors_carry_code_and_line(text, code, line):
    with pytest.raises(ScenarioError) as err:
        parse(text)
    assert err.value.code == code
    assert err.value.line == line


def test_error_lists_expected_tokens():
    with pytest.raises(ScenarioError) as err:
        parse("scenario x\nbogus\n")
    assert "component" in err.value.expected


def test_non_utf8_rejected():
    with pytest.raises(ScenarioError) as err:
        parse(b"scenario \xff\n")
    assert err.value.code == "SYNTAX_ERROR"


def test_unknown_builtin():
    with pytest.raises(ScenarioError) as err:
        builtin("no-such-thing")
    assert err.value.code == "UNKNOWN_SCENARIO"


def test_load_accepts_paths(tmp_path):
    p = tmp_path / "t.rsc"
    p.write_text(MINIMAL, encoding="utf-8")
    assert load(str(p)) == parse(MINIMAL)
    assert load("eq1-detector") == builtin("eq1-detector")


# --- catalog --------------------------------------------------------------


def test_catalog_has_fourteen_scenarios():
    assert len(CATALOG) == 14 == len(set(CATALOG))


@pytest.mark.parametrize("name", CATALOG)
def test_catalog_scenario_valid_and_round_trips(name):
    s = builtin(name)
    assert s.name == name
    assert violations(s) == []
    assert parse(format_scenario(s)) == s
    assert format_scenario(parse(format_scenario(s))) == format_scenario(s)


def test_validator_reports_rule4_and_unreachable():
    diags = {(d.code, d.message) for d in validate(builtin("outside-terminal-observer"))}
    codes = {c for c, _ in diags}
    assert "RULE4_REMOVED" in codes and "UNREACHABLE" in codes
    assert any("c3 -> c4" in m for _, m in diags)
    assert "RULE4_NONE" in {d.code for d in validate(builtin("eq1-detector"))}


def test_validator_flags_rule2_violations():
    text = """\
scenario bad
observer k
component c1 weight=1 brain=k:unknown:X
component c2 brain=k:conscious:B1
component c3 brain=k:unknown:X
interact physiological window=0,1 observer=k
  flow c1 -> c2 ramp fraction=0.5
  flow c1 -> c3 ramp fraction=0.5
"""
    codes = [d.code for d in violations(parse(text))]
    assert codes.count("RULE2_CONSCIOUS_CREATION") == 1
    assert codes.count("RULE2_NO_READY") == 1  # only c3; c2 holds a (bad) conscious label


# --- properties -----------------------------------------------------------

_ids = st.from_regex(r"[a-z][a-z0-9_]{0,5}", fullmatch=True).filter(
    lambda s: s not in {"scenario", "observer", "component", "env", "interact", "flow"})
_tags = st.from_regex(r"[A-Za-z0-9_'.]{1,6}", fullmatch=True)


@st.composite
def scenarios(draw):
    observers = tuple(draw(st.lists(_ids, max_size=2, unique=True)))
    ids = draw(st.lists(_ids, min_size=2, max_size=5, unique=True))
    raw = draw(st.lists(st.integers(0, 8), min_size=len(ids), max_size=len(ids)).filter(lambda xs: sum(xs) > 0))
    total = sum(raw)
    comps = []
    for cid, w in zip(ids, raw):
        brains = ()
        if observers and draw(st.booleans()):
            kind = draw(st.sampled_from(list(BrainKind)))
            brains = (BrainLabel(draw(st.sampled_from(observers)), kind, draw(st.one_of(st.just(""), _tags))),)
        comps.append(ComponentDecl(cid, w / total, draw(st.one_of(st.just("-"), _tags)),
                                   draw(st.one_of(st.just("-"), _tags)), brains))
    weights = sum(c.weight for c in comps)
    if abs(weights - 1.0) > 1e-12:
        comps[0] = ComponentDecl(comps[0].id, comps[0].weight + 1.0 - weights, comps[0].particle,
                                 comps[0].detector, comps[0].brains)
    interactions = []
    for _ in range(draw(st.integers(0, 3))):
        kind = draw(st.sampled_from(list(InteractionKind)))
        if kind is InteractionKind.PHYSIOLOGICAL and not observers:
            kind = InteractionKind.PARTICLE_DETECTOR
        a = draw(st.floats(-5, 5, allow_nan=False))
        b = a + draw(st.floats(0.01, 5))
        flows = []
        for _ in range(draw(st.integers(1, 3))):
            src, dst = draw(st.permutations(ids))[:2]
            if draw(st.booleans()):
                flows.append(Flow(src, dst, "ramp", draw(st.floats(0.01, 1.0))))
            else:
                flows.append(Flow(src, dst, "const", draw(st.floats(0.0, 100.0))))
        obs = draw(st.sampled_from(observers)) if kind is InteractionKind.PHYSIOLOGICAL else None
        interactions.append(Interaction(kind, (a, b), tuple(flows), obs))
    envs = ()
    if draw(st.booleans()):
        envs = (("shared", tuple(ids[:2])),)
    return Scenario(draw(_ids), observers, tuple(comps), tuple(interactions), envs)


@settings(max_examples=300, deadline=None)
@given(scenarios())
def test_round_trip_property(s):
    assert parse(format_scenario(s)) == s


def test_fuzzed_inputs_never_crash():
    ok, rejected, crashes = fuzz(5000, seed=11)
    assert crashes == []
    assert ok > 0 and rejected > 0


@settings(max_examples=500, deadline=None)
@given(st.text(max_size=200))
def test_arbitrary_text_only_raises_scenario_errors(text):
    try:
        parse(text)
    except ScenarioError:
        pass


@settings(max_examples=200, deadline=None)
@given(st.binary(max_size=200))
def test_arbitrary_bytes_only_raise_scenario_errors(data):
    try:
        parse(data)
    except ScenarioError:
        pass


def test_builtin_source_parses_to_builtin():
    assert parse(builtin_source("cat-v2")) == builtin("cat-v2")
