"""Policy language for evolved signal controllers.

A policy is an ordered list of ``IF <condition> THEN <phase>`` rules and a
mandatory ``ELSE <phase>`` default; the first rule whose condition holds
picks the phase. There are no loops or assignments, so evaluation always
terminates and has no side effects.
"""

from __future__ import annotations

import random
import re
from dataclasses import dataclass, fields, is_dataclass, replace
from typing import Any, Iterator, Union

from .ssa import CONGESTION_LEVELS, IMBALANCE_LEVELS, NUMERIC_FEATURES, URGENCY_LEVELS, StructuredFacts

GRAMMAR = """\
policy      := rule* default
rule        := "IF" bexpr "THEN" pexpr
default     := "ELSE" pexpr
pexpr       := INT | ("argmax" | "argmin") "(" FEATURE ")"
bexpr       := comparison | bexpr ("AND" | "OR") bexpr | "NOT" bexpr | "(" bexpr ")"
comparison  := nexpr OP nexpr | CATFEATURE "==" LEVEL | "starvation_risk" "[" INT "]"
nexpr       := NUMBER | FEATURE "[" INT "]" | ("max" | "min" | "sum") "(" FEATURE ")"
FEATURE     := "pressure" | "queue" | "wait" | "starvation"
CATFEATURE  := "congestion" | "urgency" | "imbalance" | "dominant_flow"
OP          := ">" | "<" | ">=" | "<=" | "==" | "!="
Precedence: NOT binds tighter than AND, AND tighter than OR. "#" starts a comment.
"""

CATEGORICAL = {
    "congestion": CONGESTION_LEVELS,
    "urgency": URGENCY_LEVELS,
    "imbalance": IMBALANCE_LEVELS,
    "dominant_flow": ("None",),  # or a phase index
}
COMPARE_OPS = (">", "<", ">=", "<=", "==", "!=")
FLIPPED = {">": "<", "<": ">", ">=": "<=", "<=": ">=", "==": "!=", "!=": "=="}
AGGREGATES = ("max", "min", "sum")
SELECTORS = ("argmax", "argmin")
KEYWORDS = ("IF", "THEN", "ELSE", "AND", "OR", "NOT")
MUTATION_KINDS = ("threshold-perturb", "rule-insert", "rule-delete", "rule-swap", "operator-flip", "selector-swap")


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class FeatureRef:
    feature: str
    index: int


@dataclass(frozen=True)
class Agg:
    op: str
    feature: str


@dataclass(frozen=True)
class Compare:
    op: str
    left: "NExpr"
    right: "NExpr"


@dataclass(frozen=True)
class CatTest:
    feature: str
    level: str | int


@dataclass(frozen=True)
class RiskTest:
    phase: int


@dataclass(frozen=True)
class Not:
    operand: "BExpr"


@dataclass(frozen=True)
class BoolOp:
    op: str  # "AND" | "OR"
    left: "BExpr"
    right: "BExpr"


@dataclass(frozen=True)
class PhaseLit:
    phase: int


@dataclass(frozen=True)
class Select:
    op: str  # "argmax" | "argmin"
    feature: str


@dataclass(frozen=True)
class Rule:
    condition: "BExpr"
    action: "PExpr"


@dataclass(frozen=True)
class Policy:
    rules: tuple[Rule, ...]
    default: "PExpr"


NExpr = Union[Num, FeatureRef, Agg]
BExpr = Union[Compare, CatTest, RiskTest, Not, BoolOp]
PExpr = Union[PhaseLit, Select]


@dataclass(frozen=True)
class Signature:
    phase_count: int
    categorical: bool = True
    max_depth: int = 12
    max_rules: int = 16


@dataclass(frozen=True)
class PolicySource:
    text: str
    name: str | None = None
    generation: int = 0
    parent: str | None = None


@dataclass(frozen=True)
class Diagnostic:
    line: int
    column: int
    code: str  # syntax | unknown-feature | phase-range | limit
    message: str

    def to_dict(self) -> dict[str, Any]:
        return {"line": self.line, "column": self.column, "code": self.code, "message": self.message}

    def __str__(self) -> str:
        return f"{self.line}:{self.column}: {self.code}: {self.message}"


class PolicyError(ValueError):
    def __init__(self, diagnostic: Diagnostic):
        super().__init__(str(diagnostic))
        self.diagnostic = diagnostic


# --- lexer -----------------------------------------------------------------

_TOKEN = re.compile(
    r"""
    (?P<ws>[ \t\r]+|\#[^\n]*)
  | (?P<nl>\n)
  | (?P<num>-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>>=|<=|==|!=|>|<)
  | (?P<punct>[()\[\]])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str  # num | name | op | punct | eof
    text: str
    line: int
    column: int


def tokenize(text: str) -> list[Token]:
    tokens = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise PolicyError(Diagnostic(line, pos - line_start + 1, "syntax",
                                         f"unexpected character {text[pos]!r}"))
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind != "ws":
            tokens.append(Token(kind, m.group(), line, pos - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


# --- parser ----------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[Token], sig: Signature):
        self.toks = tokens
        self.pos = 0
        self.sig = sig

    @property
    def tok(self) -> Token:
        return self.toks[self.pos]

    def fail(self, code: str, message: str, tok: Token | None = None) -> PolicyError:
        tok = tok or self.tok
        return PolicyError(Diagnostic(tok.line, tok.column, code, message))

    def advance(self) -> Token:
        tok = self.tok
        self.pos += 1
        return tok

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind == "eof":
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.fail("syntax", f"expected {text!r}, found {found}")
        return self.advance()

    def phase_index(self) -> int:
        tok = self.tok
        if tok.kind != "num" or not re.fullmatch(r"\d+", tok.text):
            raise self.fail("syntax", f"expected a phase index, found {tok.text or 'end of input'!r}")
        self.advance()
        value = int(tok.text)
        if value >= self.sig.phase_count:
            raise self.fail("phase-range", f"phase {value} out of range [0, {self.sig.phase_count})", tok)
        return value

    def feature(self) -> str:
        tok = self.tok
        if tok.kind != "name":
            raise self.fail("syntax", f"expected a feature name, found {tok.text or 'end of input'!r}")
        if tok.text not in NUMERIC_FEATURES:
            raise self.fail("unknown-feature", f"unknown feature {tok.text!r}; expected one of {NUMERIC_FEATURES}")
        return self.advance().text

    def policy(self) -> tuple[Policy, list[Token]]:
        rules, starts = [], []
        while self.tok.text == "IF" and self.tok.kind == "name":
            starts.append(self.advance())
            cond = self.bexpr()
            self.expect("THEN")
            rules.append(Rule(cond, self.pexpr()))
        if not (self.tok.kind == "name" and self.tok.text == "ELSE"):
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.fail("syntax", f"expected 'IF' or 'ELSE', found {found}")
        self.advance()
        default = self.pexpr()
        if self.tok.kind != "eof":
            raise self.fail("syntax", f"unexpected {self.tok.text!r} after the default rule")
        return Policy(tuple(rules), default), starts

    def pexpr(self) -> PExpr:
        tok = self.tok
        if tok.kind == "num":
            return PhaseLit(self.phase_index())
        if tok.kind == "name" and tok.text in SELECTORS:
            self.advance()
            self.expect("(")
            feat = self.feature()
            self.expect(")")
            return Select(tok.text, feat)
        raise self.fail("syntax", f"expected a phase or argmax/argmin, found {tok.text or 'end of input'!r}")

    def bexpr(self) -> BExpr:
        node = self.and_expr()
        while self.tok.kind == "name" and self.tok.text == "OR":
            self.advance()
            node = BoolOp("OR", node, self.and_expr())
        return node

    def and_expr(self) -> BExpr:
        node = self.not_expr()
        while self.tok.kind == "name" and self.tok.text == "AND":
            self.advance()
            node = BoolOp("AND", node, self.not_expr())
        return node

    def not_expr(self) -> BExpr:
        if self.tok.kind == "name" and self.tok.text == "NOT":
            self.advance()
            return Not(self.not_expr())
        if self.tok.text == "(":
            self.advance()
            node = self.bexpr()
            self.expect(")")
            return node
        return self.comparison()

    def comparison(self) -> BExpr:
        tok = self.tok
        if tok.kind == "name" and tok.text in CATEGORICAL:
            if not self.sig.categorical:
                raise self.fail("unknown-feature", f"categorical feature {tok.text!r} is not available")
            self.advance()
            self.expect("==")
            return CatTest(tok.text, self.level(tok.text))
        if tok.kind == "name" and tok.text == "starvation_risk":
            if not self.sig.categorical:
                raise self.fail("unknown-feature", "categorical feature 'starvation_risk' is not available")
            self.advance()
            self.expect("[")
            phase = self.phase_index()
            self.expect("]")
            return RiskTest(phase)
        left = self.nexpr()
        if self.tok.kind != "op":
            found = "end of input" if self.tok.kind == "eof" else repr(self.tok.text)
            raise self.fail("syntax", f"expected a comparison operator, found {found}")
        op = self.advance().text
        return Compare(op, left, self.nexpr())

    def level(self, feature: str) -> str | int:
        tok = self.tok
        if feature == "dominant_flow" and tok.kind == "num":
            return self.phase_index()
        if tok.kind == "name" and tok.text in CATEGORICAL[feature]:
            return self.advance().text
        allowed = CATEGORICAL[feature] + (("<phase>",) if feature == "dominant_flow" else ())
        raise self.fail("syntax", f"invalid level {tok.text or 'end of input'!r} for {feature}; expected one of {allowed}")

    def nexpr(self) -> NExpr:
        tok = self.tok
        if tok.kind == "num":
            self.advance()
            return Num(float(tok.text))
        if tok.kind == "name" and tok.text in AGGREGATES:
            self.advance()
            self.expect("(")
            feat = self.feature()
            self.expect(")")
            return Agg(tok.text, feat)
        if tok.kind == "name":
            feat = self.feature()
            self.expect("[")
            idx = self.phase_index()
            self.expect("]")
            return FeatureRef(feat, idx)
        raise self.fail("syntax", f"expected a number or feature, found {tok.text or 'end of input'!r}")


def depth(node: BExpr) -> int:
    if isinstance(node, Not):
        return 1 + depth(node.operand)
    if isinstance(node, BoolOp):
        return 1 + max(depth(node.left), depth(node.right))
    return 1


def parse(source: PolicySource | str, signature: Signature) -> Policy:
    """Parse and validate policy text; raises PolicyError with a Diagnostic."""
    text = source.text if isinstance(source, PolicySource) else source
    parser = _Parser(tokenize(text), signature)
    policy, starts = parser.policy()
    if len(policy.rules) > signature.max_rules:
        tok = starts[signature.max_rules]
        raise PolicyError(Diagnostic(tok.line, tok.column, "limit",
                                     f"{len(policy.rules)} rules exceed the limit of {signature.max_rules}"))
    for rule, tok in zip(policy.rules, starts):
        d = depth(rule.condition)
        if d > signature.max_depth:
            raise PolicyError(Diagnostic(tok.line, tok.column, "limit",
                                         f"condition depth {d} exceeds the limit of {signature.max_depth}"))
    return policy


def validate(policy: Policy, signature: Signature) -> None:
    """Check an AST built in code against ``signature`` (re-parse of its rendering)."""
    parse(render(policy), signature)


# --- rendering -------------------------------------------------------------

def _num(x: float) -> str:
    return str(int(x)) if float(x).is_integer() and abs(x) < 1e15 else repr(float(x))


def render_node(node: Any) -> str:
    if isinstance(node, Num):
        return _num(node.value)
    if isinstance(node, FeatureRef):
        return f"{node.feature}[{node.index}]"
    if isinstance(node, Agg):
        return f"{node.op}({node.feature})"
    if isinstance(node, Compare):
        return f"{render_node(node.left)} {node.op} {render_node(node.right)}"
    if isinstance(node, CatTest):
        return f"{node.feature} == {node.level}"
    if isinstance(node, RiskTest):
        return f"starvation_risk[{node.phase}]"
    if isinstance(node, Not):
        return f"NOT {render_node(node.operand)}"
    if isinstance(node, BoolOp):
        return f"({render_node(node.left)} {node.op} {render_node(node.right)})"
    if isinstance(node, PhaseLit):
        return str(node.phase)
    if isinstance(node, Select):
        return f"{node.op}({node.feature})"
    raise TypeError(f"not a policy node: {node!r}")


def render(policy: Policy) -> str:
    """Canonical text: one rule per line, binary boolean nodes parenthesised."""
    lines = [f"IF {render_node(r.condition)} THEN {render_node(r.action)}" for r in policy.rules]
    lines.append(f"ELSE {render_node(policy.default)}")
    return "\n".join(lines)


# --- evaluation ------------------------------------------------------------

def _argsel(values: tuple[float, ...], op: str) -> int:
    best = 0
    for i in range(1, len(values)):
        if (values[i] > values[best]) if op == "argmax" else (values[i] < values[best]):
            best = i
    return best


def _nval(node: NExpr, facts: StructuredFacts) -> float:
    if isinstance(node, Num):
        return node.value
    if isinstance(node, FeatureRef):
        return facts.feature(node.feature)[node.index]
    vec = facts.feature(node.feature)
    if node.op == "max":
        return max(vec)
    if node.op == "min":
        return min(vec)
    return sum(vec)


def _bval(node: BExpr, facts: StructuredFacts) -> bool:
    if isinstance(node, Compare):
        a, b = _nval(node.left, facts), _nval(node.right, facts)
        op = node.op
        if op == ">":
            return a > b
        if op == "<":
            return a < b
        if op == ">=":
            return a >= b
        if op == "<=":
            return a <= b
        if op == "==":
            return a == b
        return a != b
    if isinstance(node, CatTest):
        if node.feature == "dominant_flow":
            return facts.dominant_flow == (None if node.level == "None" else node.level)
        return getattr(facts, node.feature) == node.level
    if isinstance(node, RiskTest):
        return facts.starvation_risk[node.phase]
    if isinstance(node, Not):
        return not _bval(node.operand, facts)
    if node.op == "AND":
        return _bval(node.left, facts) and _bval(node.right, facts)
    return _bval(node.left, facts) or _bval(node.right, facts)


def _pval(node: PExpr, facts: StructuredFacts) -> int:
    if isinstance(node, PhaseLit):
        return node.phase
    return _argsel(facts.feature(node.feature), node.op)


def evaluate(policy: Policy, facts: StructuredFacts) -> int:
    """Phase chosen by the first matching rule, else the default. Ties in
    argmax/argmin go to the lowest phase index."""
    for rule in policy.rules:
        if _bval(rule.condition, facts):
            return _pval(rule.action, facts)
    return _pval(policy.default, facts)


class PolicyController:
    """Simulator controller that evaluates a policy at every intersection."""

    def __init__(self, policy: Policy):
        self.policy = policy

    def __call__(self, obs) -> dict[str, int]:
        return {iid: evaluate(self.policy, f) for iid, f in obs.facts.items()}


# --- mutation --------------------------------------------------------------

@dataclass(frozen=True)
class Mutation:
    program: Policy
    kind: str
    applied: bool
    reason: str = ""


def walk(node: Any, path: tuple = ()) -> Iterator[tuple[tuple, Any]]:
    yield path, node
    if isinstance(node, tuple):
        for i, child in enumerate(node):
            yield from walk(child, path + (i,))
    elif is_dataclass(node):
        for f in fields(node):
            yield from walk(getattr(node, f.name), path + (f.name,))


def replace_at(node: Any, path: tuple, new: Any) -> Any:
    if not path:
        return new
    head, rest = path[0], path[1:]
    if isinstance(node, tuple):
        items = list(node)
        items[head] = replace_at(node[head], rest, new)
        return tuple(items)
    return replace(node, **{head: replace_at(getattr(node, head), rest, new)})


FEATURE_SCALE = {"pressure": 30.0, "queue": 30.0, "wait": 120.0, "starvation": 180.0}


def random_condition(rng: random.Random, sig: Signature, focus: str | None = None) -> tuple[BExpr, int]:
    """A small random condition and the phase it naturally points at."""
    n = sig.phase_count
    i = rng.randrange(n)
    if focus == "starvation":
        if sig.categorical and rng.random() < 0.5:
            return RiskTest(i), i
        thr = float(rng.choice((60, 90, 120, 150)))
        cond = BoolOp("AND", Compare(">", FeatureRef("starvation", i), Num(thr)),
                      Compare(">", FeatureRef("pressure", i), Num(float(rng.randint(2, 10)))))
        return cond, i
    roll = rng.random()
    if sig.categorical and roll < 0.2:
        feat = rng.choice(("congestion", "urgency", "imbalance"))
        return CatTest(feat, rng.choice(CATEGORICAL[feat])), i
    if sig.categorical and roll < 0.3:
        return RiskTest(i), i
    feat = rng.choice(NUMERIC_FEATURES)
    thr = round(rng.uniform(0, FEATURE_SCALE[feat]), 1)
    cond = Compare(rng.choice((">", "<")), FeatureRef(feat, i), Num(thr))
    if roll > 0.8:
        feat2 = rng.choice(NUMERIC_FEATURES)
        cond = BoolOp(rng.choice(("AND", "OR")), cond,
                      Compare(">", FeatureRef(feat2, i), Num(round(rng.uniform(0, FEATURE_SCALE[feat2]), 1))))
    return cond, i


def random_rule(rng: random.Random, sig: Signature, focus: str | None = None) -> Rule:
    cond, i = random_condition(rng, sig, focus)
    if focus is None and rng.random() < 0.25:
        return Rule(cond, Select(rng.choice(SELECTORS), rng.choice(NUMERIC_FEATURES)))
    return Rule(cond, PhaseLit(i))


def mutate_ast(
    program: Policy,
    seed: int,
    kind: str,
    signature: Signature,
    delta: tuple[float, float] = (0.5, 5.0),
    focus: str | None = None,
) -> Mutation:
    """Apply exactly one edit of ``kind``; deterministic in (program, seed, kind).

    ``focus="starvation"`` makes ``rule-insert`` add a fairness override.
    An inapplicable kind returns the program unchanged with ``applied=False``.
    """
    if kind not in MUTATION_KINDS:
        raise ValueError(f"unknown mutation kind {kind!r}")
    rng = random.Random(f"{seed}:{kind}:{render(program)}")
    rules = program.rules

    if kind == "threshold-perturb":
        sites = [(p, n) for p, n in walk(program) if isinstance(n, Num)]
        if not sites:
            return Mutation(program, kind, False, "no numeric threshold to perturb")
        path, node = rng.choice(sites)
        step = rng.uniform(*delta) * rng.choice((-1, 1))
        value = round(node.value + step, 2)
        if value == node.value:
            value = node.value + delta[1]
        return Mutation(replace_at(program, path, Num(value)), kind, True)

    if kind == "rule-insert":
        if len(rules) >= signature.max_rules:
            return Mutation(program, kind, False, "rule limit reached")
        rule = random_rule(rng, signature, focus)
        at = rng.randint(0, len(rules)) if focus is None else rng.randint(0, min(1, len(rules)))
        return Mutation(replace(program, rules=rules[:at] + (rule,) + rules[at:]), kind, True)

    if kind == "rule-delete":
        if not rules:
            return Mutation(program, kind, False, "default-only program has no rule to delete")
        at = rng.randrange(len(rules))
        return Mutation(replace(program, rules=rules[:at] + rules[at + 1:]), kind, True)

    if kind == "rule-swap":
        if len(rules) < 2:
            return Mutation(program, kind, False, "fewer than two rules")
        a, b = sorted(rng.sample(range(len(rules)), 2))
        if rules[a] == rules[b]:
            return Mutation(program, kind, False, "swapped rules are identical")
        items = list(rules)
        items[a], items[b] = items[b], items[a]
        return Mutation(replace(program, rules=tuple(items)), kind, True)

    if kind == "operator-flip":
        sites = [(p, n) for p, n in walk(program) if isinstance(n, (Compare, BoolOp))]
        if not sites:
            return Mutation(program, kind, False, "no operator to flip")
        path, node = rng.choice(sites)
        if isinstance(node, Compare):
            new = replace(node, op=FLIPPED[node.op])
        else:
            new = replace(node, op="OR" if node.op == "AND" else "AND")
        return Mutation(replace_at(program, path, new), kind, True)

    sites = [(p, n) for p, n in walk(program) if isinstance(n, Select)]
    if not sites:
        return Mutation(program, kind, False, "no argmax/argmin selector")
    path, node = rng.choice(sites)
    options = [(op, f) for op in SELECTORS for f in NUMERIC_FEATURES if (op, f) != (node.op, node.feature)]
    op, feat = rng.choice(options)
    return Mutation(replace_at(program, path, Select(op, feat)), kind, True)
