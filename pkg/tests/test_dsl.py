import random

import pytest
from hypothesis import given, settings, strategies as st

from tsclab.dsl import (
    MUTATION_KINDS,
    BoolOp,
    CatTest,
    Compare,
    FeatureRef,
    Not,
    Num,
    PhaseLit,
    PolicyError,
    PolicySource,
    Rule,
    Select,
    Signature,
    evaluate,
    mutate_ast,
    parse,
    render,
)
from tsclab.ssa import StructuredFacts

from helpers import random_facts, random_program

SIG = Signature(4)


# --- parse ------------------------------------------------------------------

def test_parse_example_rule():
    p = parse("IF pressure[2] > 10 AND congestion == Critical THEN 2 ELSE argmax(pressure)", SIG)
    assert len(p.rules) == 1
    assert p.rules[0] == Rule(BoolOp("AND", Compare(">", FeatureRef("pressure", 2), Num(10.0)),
                                     CatTest("congestion", "Critical")), PhaseLit(2))
    assert p.default == Select("argmax", "pressure")


def test_phase_out_of_range():
    with pytest.raises(PolicyError) as err:
        parse("IF pressure[0] > 1 THEN 7 ELSE 0", SIG)
    d = err.value.diagnostic
    assert (d.code, d.line, d.column) == ("phase-range", 1, 25)


def test_empty_source_is_syntax_error_at_origin():
    with pytest.raises(PolicyError) as err:
        parse("", SIG)
    d = err.value.diagnostic
    assert (d.code, d.line, d.column) == ("syntax", 1, 1)


@pytest.mark.parametrize("text,code,line,col", [
    ("ELSE argmax(speed)", "unknown-feature", 1, 13),
    ("IF queue[1] > 3\nTHEN 1\nELSE argmax(wait", "syntax", 3, 17),
    ("IF lanes[0] > 1 THEN 0 ELSE 0", "unknown-feature", 1, 4),
    ("IF congestion == Jammed THEN 0 ELSE 0", "syntax", 1, 18),
    ("IF pressure[0] THEN 0 ELSE 0", "syntax", 1, 16),
    ("ELSE 0 ELSE 1", "syntax", 1, 8),
    ("ELSE 1 $", "syntax", 1, 8),
])
def test_diagnostics_are_located(text, code, line, col):
    with pytest.raises(PolicyError) as err:
        parse(text, SIG)
    d = err.value.diagnostic
    assert (d.code, d.line, d.column) == (code, line, col)
    assert d.to_dict()["code"] == code


def test_limits():
    many = "\n".join(["IF queue[0] > 1 THEN 0"] * 3) + "\nELSE 0"
    with pytest.raises(PolicyError) as err:
        parse(many, Signature(4, max_rules=2))
    assert err.value.diagnostic.code == "limit"
    assert err.value.diagnostic.line == 3
    deep = "IF " + "NOT " * 12 + "queue[0] > 1 THEN 0 ELSE 0"
    with pytest.raises(PolicyError) as err:
        parse(deep, SIG)
    assert err.value.diagnostic.code == "limit"
    parse("IF " + "NOT " * 11 + "queue[0] > 1 THEN 0 ELSE 0", SIG)


def test_categorical_disabled_without_ssa():
    with pytest.raises(PolicyError) as err:
        parse("IF starvation_risk[1] THEN 1 ELSE 0", Signature(4, categorical=False))
    assert err.value.diagnostic.code == "unknown-feature"


def test_comments_negative_numbers_and_precedence():
    p = parse("# hold\nIF NOT wait[0] > -2 OR queue[1] < 3 AND urgency == Critical THEN 1  # tail\nELSE 0", SIG)
    cond = p.rules[0].condition
    assert isinstance(cond, BoolOp) and cond.op == "OR"
    assert cond.left == Not(Compare(">", FeatureRef("wait", 0), Num(-2.0)))
    assert cond.right.op == "AND"


def test_dominant_flow_levels():
    p = parse("IF dominant_flow == 2 THEN 2 IF dominant_flow == None THEN 0 ELSE 1", SIG)
    assert p.rules[0].condition == CatTest("dominant_flow", 2)
    assert p.rules[1].condition == CatTest("dominant_flow", "None")


# --- render -----------------------------------------------------------------

def test_render_parenthesises_nested_booleans():
    p = parse("IF queue[0] > 1 AND queue[1] > 2 OR NOT queue[2] > 3 AND queue[3] > 4 THEN 0 ELSE 1", SIG)
    assert render(p) == ("IF ((queue[0] > 1 AND queue[1] > 2) OR (NOT queue[2] > 3 AND queue[3] > 4)) THEN 0\n"
                         "ELSE 1")


def test_render_default_only():
    assert render(parse("  ELSE   argmin( queue )  ", SIG)) == "ELSE argmin(queue)"


def test_round_trip_random_programs():
    rng = random.Random(0)
    for _ in range(300):
        p = random_program(rng)
        text = render(p)
        assert parse(text, SIG) == p
        assert render(parse(text, SIG)) == text


# --- evaluate ---------------------------------------------------------------

def facts_with(pressure=(0, 0, 0, 0), risk=(False,) * 4, **kw):
    base = dict(congestion="Low", dominant_flow=None, starvation_risk=risk, urgency="Normal", imbalance="None",
                pressure=tuple(map(float, pressure)), queue=(0.0,) * 4, wait=(0.0,) * 4, starvation=(0.0,) * 4)
    base.update(kw)
    return StructuredFacts(**base)


def test_first_matching_rule_fires():
    p = parse("IF starvation_risk[1] THEN 1 ELSE argmax(pressure)", SIG)
    assert evaluate(p, facts_with((9, 0, 0, 0), risk=(False, True, False, False))) == 1
    assert evaluate(p, facts_with((9, 0, 0, 0))) == 0


def test_argmax_ties_go_to_lowest_index():
    p = parse("ELSE argmax(pressure)", SIG)
    assert evaluate(p, facts_with()) == 0
    assert evaluate(p, facts_with((3, 9, 9, 1))) == 1
    q = parse("ELSE argmin(pressure)", SIG)
    assert evaluate(q, facts_with((3, 1, 9, 1))) == 1


def test_aggregates_and_categoricals():
    f = facts_with((1, 2, 3, 4), congestion="High", imbalance="EW_Dominant", dominant_flow=3)
    assert evaluate(parse("IF sum(pressure) == 10 AND min(pressure) < max(pressure) THEN 2 ELSE 0", SIG), f) == 2
    assert evaluate(parse("IF imbalance == EW_Dominant AND dominant_flow == 3 THEN 3 ELSE 0", SIG), f) == 3
    assert evaluate(parse("IF congestion == Critical THEN 3 ELSE 1", SIG), f) == 1


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_evaluate_is_total(seed):
    rng = random.Random(seed)
    p = random_program(rng)
    for _ in range(10):
        phase = evaluate(p, random_facts(rng))
        assert 0 <= phase < 4


# --- mutation ---------------------------------------------------------------

def _edit_count(a, b):
    """Tokens that differ between the renderings of two same-shaped programs."""
    ta, tb = render(a).split(), render(b).split()
    assert len(ta) == len(tb)
    return sum(1 for x, y in zip(ta, tb) if x != y)


def test_threshold_perturb_changes_one_number_within_delta():
    p = parse("IF pressure[2] > 10 THEN 2 ELSE argmax(pressure)", SIG)
    for seed in range(50):
        m = mutate_ast(p, seed, "threshold-perturb", SIG, delta=(0.5, 5.0))
        assert m.applied
        new = m.program.rules[0].condition
        assert new.op == ">" and new.left == FeatureRef("pressure", 2)
        assert 0.5 - 1e-9 <= abs(new.right.value - 10) <= 5.0 + 1e-9
        assert m.program.default == p.default


def test_rule_delete_on_default_only_is_noop():
    p = parse("ELSE 0", SIG)
    m = mutate_ast(p, 1, "rule-delete", SIG)
    assert not m.applied and m.program == p and m.reason


def test_rule_swap_reorders_two_rules():
    p = parse("IF queue[0] > 1 THEN 0 IF queue[1] > 1 THEN 1 ELSE argmax(queue)", SIG)
    m = mutate_ast(p, 3, "rule-swap", SIG)
    assert m.applied
    assert m.program.rules == (p.rules[1], p.rules[0])
    assert m.program.default == p.default


def test_each_kind_is_deterministic_and_valid():
    rng = random.Random(5)
    for _ in range(200):
        p = random_program(rng)
        for kind in MUTATION_KINDS:
            seed = rng.randrange(1000)
            a = mutate_ast(p, seed, kind, SIG)
            b = mutate_ast(p, seed, kind, SIG)
            assert a == b
            assert parse(render(a.program), SIG) == a.program
            if a.applied:
                assert a.program != p or kind == "threshold-perturb"
            else:
                assert a.program == p


def test_operator_and_selector_edits_touch_one_node():
    p = parse("IF queue[0] > 1 AND wait[1] < 50 THEN 0 ELSE argmax(pressure)", SIG)
    for seed in range(20):
        flip = mutate_ast(p, seed, "operator-flip", SIG)
        assert _edit_count(p, flip.program) == 1
        swap = mutate_ast(p, seed, "selector-swap", SIG)
        assert swap.program.rules == p.rules
        assert swap.program.default != p.default


def test_rule_insert_respects_limit_and_focus():
    sig = Signature(4, max_rules=1)
    p = parse("IF queue[0] > 1 THEN 0 ELSE 1", sig)
    assert not mutate_ast(p, 0, "rule-insert", sig).applied
    base = parse("ELSE argmax(pressure)", SIG)
    texts = [render(mutate_ast(base, s, "rule-insert", SIG, focus="starvation").program) for s in range(40)]
    assert all("starvation" in t for t in texts)


def test_unknown_kind():
    with pytest.raises(ValueError):
        mutate_ast(parse("ELSE 0", SIG), 0, "crossover", SIG)


def test_policy_source_accepted():
    assert parse(PolicySource("ELSE 3", name="x"), SIG).default == PhaseLit(3)
