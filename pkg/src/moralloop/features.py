"""Principle DSL and feature construction for choice models.

A principle is a named side-level boolean predicate. Its indicator enters a
side's value with a learned weight, so everything here is strictly
side-local: atoms see one side's composition plus the scenario-level
heading/legality/problem-type context, never the other side's counts.

Grammar (EBNF)::

    spec    := "principle" IDENT ":" expr
    expr    := term { "&" term }
    term    := [ "!" ] atom
    atom    := "swerve_required" | "crossing_illegal"
             | "all(" test ")" | "any(" test ")"
             | "count(" test ")" cmp INT
             | "type(" typename ")" | "pole(" polename ")"
    test    := attr "=" value      attr := species|age|body|gender|status|kind
    cmp     := "==" | ">=" | "<=" | ">" | "<"

``#`` starts a comment that runs to end of line. Files may hold any number
of principles.

Atom semantics for a side S of scenario s:

* ``swerve_required``   -- S is the side the car is heading toward, so
  saving S requires the car to swerve.
* ``crossing_illegal``  -- the legality signal names the *other* side legal.
* ``all(a=v)/any(a=v)`` -- quantifiers over the individuals on S.
* ``count(a=v) cmp k``  -- number of individuals on S satisfying the test.
* ``type(t)``           -- the scenario's detected problem type is t
  (side-independent).
* ``pole(v)``           -- the detected type's positive pole is v and S is
  the side holding it.
"""

from __future__ import annotations

import operator
import re
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import ParseError, ValidationError
from .scenario import (
    ATTRIBUTES,
    POLE_TO_TYPE,
    ProblemType,
    Scenario,
    Side,
    Taxonomy,
    TypeMatch,
    active_taxonomy,
    detect_problem_type,
    detect_problem_type_matrix,
)

# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SwerveRequired:
    pass


@dataclass(frozen=True)
class CrossingIllegal:
    pass


@dataclass(frozen=True)
class AttrTest:
    attr: str
    value: str


@dataclass(frozen=True)
class AllOf:
    test: AttrTest


@dataclass(frozen=True)
class AnyOf:
    test: AttrTest


@dataclass(frozen=True)
class CountCmp:
    test: AttrTest
    op: str
    threshold: int


@dataclass(frozen=True)
class TypeIs:
    ptype: ProblemType


@dataclass(frozen=True)
class PoleIs:
    pole: str


Atom = Union[SwerveRequired, CrossingIllegal, AllOf, AnyOf, CountCmp, TypeIs, PoleIs]


@dataclass(frozen=True)
class Not:
    term: Atom


@dataclass(frozen=True)
class And:
    terms: tuple


Expr = Union[Atom, Not, And]


@dataclass(frozen=True)
class PrincipleSpec:
    """A named side-level predicate usable as a value feature."""

    name: str
    expr: Expr

    @property
    def source(self) -> str:
        return f"principle {self.name}: {expr_to_source(self.expr)}"


_CMP_FUNCS = {"==": operator.eq, ">=": operator.ge, "<=": operator.le, ">": operator.gt, "<": operator.lt}


def expr_to_source(expr: Expr) -> str:
    if isinstance(expr, And):
        return " & ".join(expr_to_source(t) for t in expr.terms)
    if isinstance(expr, Not):
        return "!" + expr_to_source(expr.term)
    if isinstance(expr, SwerveRequired):
        return "swerve_required"
    if isinstance(expr, CrossingIllegal):
        return "crossing_illegal"
    if isinstance(expr, AllOf):
        return f"all({expr.test.attr}={expr.test.value})"
    if isinstance(expr, AnyOf):
        return f"any({expr.test.attr}={expr.test.value})"
    if isinstance(expr, CountCmp):
        return f"count({expr.test.attr}={expr.test.value}) {expr.op} {expr.threshold}"
    if isinstance(expr, TypeIs):
        return f"type({expr.ptype.value})"
    if isinstance(expr, PoleIs):
        return f"pole({expr.pole})"
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"(?P<ws>[ \t\r]+)"
    r"|(?P<comment>#[^\n]*)"
    r"|(?P<newline>\n)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<int>\d+)"
    r"|(?P<op>==|>=|<=|[():&!=<>])"
)


class _Token:
    __slots__ = ("kind", "text", "line", "column")

    def __init__(self, kind, text, line, column):
        self.kind = kind
        self.text = text
        self.line = line
        self.column = column


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    line, col = 1, 1
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, col)
        kind = m.lastgroup
        value = m.group()
        if kind == "newline":
            line += 1
            col = 1
        else:
            if kind not in ("ws", "comment"):
                tokens.append(_Token(kind, value, line, col))
            col += len(value)
        pos = m.end()
    tokens.append(_Token("eof", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str, taxonomy: Taxonomy):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.tax = taxonomy

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def advance(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def expect(self, kind: str, text: Optional[str] = None) -> _Token:
        tok = self.peek()
        if tok.kind != kind or (text is not None and tok.text != text):
            wanted = text if text is not None else kind
            got = tok.text if tok.kind != "eof" else "end of input"
            raise ParseError(f"expected {wanted!r}, found {got!r}", tok.line, tok.column)
        return self.advance()

    def parse_file(self) -> list[PrincipleSpec]:
        specs = []
        seen = set()
        while self.peek().kind != "eof":
            spec = self.parse_spec()
            if spec.name in seen:
                raise ParseError(f"duplicate principle name {spec.name!r}")
            seen.add(spec.name)
            specs.append(spec)
        return specs

    def parse_spec(self) -> PrincipleSpec:
        self.expect("ident", "principle")
        name = self.expect("ident").text
        self.expect("op", ":")
        return PrincipleSpec(name, self.parse_expr())

    def parse_expr(self) -> Expr:
        terms = [self.parse_term()]
        while self.peek().kind == "op" and self.peek().text == "&":
            self.advance()
            terms.append(self.parse_term())
        return terms[0] if len(terms) == 1 else And(tuple(terms))

    def parse_term(self) -> Expr:
        if self.peek().kind == "op" and self.peek().text == "!":
            self.advance()
            return Not(self.parse_atom())
        return self.parse_atom()

    def parse_atom(self) -> Atom:
        tok = self.peek()
        if tok.kind != "ident":
            got = tok.text if tok.kind != "eof" else "end of input"
            raise ParseError(f"expected an atom, found {got!r}", tok.line, tok.column)
        head = self.advance().text
        if head == "swerve_required":
            return SwerveRequired()
        if head == "crossing_illegal":
            return CrossingIllegal()
        if head in ("all", "any", "count"):
            self.expect("op", "(")
            test = self.parse_test()
            self.expect("op", ")")
            if head == "all":
                return AllOf(test)
            if head == "any":
                return AnyOf(test)
            cmp_tok = self.peek()
            if cmp_tok.kind != "op" or cmp_tok.text not in _CMP_FUNCS:
                got = cmp_tok.text if cmp_tok.kind != "eof" else "end of input"
                raise ParseError(f"expected a comparison operator, found {got!r}", cmp_tok.line, cmp_tok.column)
            self.advance()
            int_tok = self.peek()
            if int_tok.kind != "int":
                got = int_tok.text if int_tok.kind != "eof" else "end of input"
                raise ParseError(f"expected an integer, found {got!r}", int_tok.line, int_tok.column)
            self.advance()
            return CountCmp(test, cmp_tok.text, int(int_tok.text))
        if head == "type":
            self.expect("op", "(")
            name_tok = self.expect("ident")
            self.expect("op", ")")
            try:
                ptype = ProblemType(name_tok.text)
            except ValueError:
                raise ParseError(f"unknown problem type {name_tok.text!r}", name_tok.line, name_tok.column)
            return TypeIs(ptype)
        if head == "pole":
            self.expect("op", "(")
            name_tok = self.expect("ident")
            self.expect("op", ")")
            if name_tok.text not in POLE_TO_TYPE:
                raise ParseError(f"unknown pole {name_tok.text!r}", name_tok.line, name_tok.column)
            return PoleIs(name_tok.text)
        raise ParseError(f"unknown atom {head!r}", tok.line, tok.column)

    def parse_test(self) -> AttrTest:
        attr_tok = self.expect("ident")
        attr = attr_tok.text
        if attr not in ATTRIBUTES and attr != "kind":
            raise ParseError(f"unknown attribute {attr!r}", attr_tok.line, attr_tok.column)
        self.expect("op", "=")
        value_tok = self.expect("ident")
        if value_tok.text not in self.tax.attribute_values(attr):
            raise ParseError(
                f"unknown value {value_tok.text!r} for attribute {attr!r}",
                value_tok.line,
                value_tok.column,
            )
        return AttrTest(attr, value_tok.text)


def parse_principle(text: str, taxonomy: Taxonomy = None) -> PrincipleSpec:
    """Parse a single ``principle NAME: expr`` declaration."""
    if not text.strip():
        raise ParseError("empty principle source")
    parser = _Parser(text, taxonomy or active_taxonomy())
    spec = parser.parse_spec()
    tok = parser.peek()
    if tok.kind != "eof":
        raise ParseError(f"unexpected trailing input {tok.text!r}", tok.line, tok.column)
    return spec


def parse_principles(text: str, taxonomy: Taxonomy = None) -> list[PrincipleSpec]:
    """Parse a file-worth of principle declarations (possibly none)."""
    parser = _Parser(text, taxonomy or active_taxonomy())
    return parser.parse_file()


# ---------------------------------------------------------------------------
# Scalar evaluation
# ---------------------------------------------------------------------------


def eval_principle(
    p: PrincipleSpec,
    s: Scenario,
    side: Side,
    taxonomy: Taxonomy = None,
    match: Optional[TypeMatch] = "auto",
) -> bool:
    """Evaluate a principle on one side of a scenario."""
    tax = taxonomy or active_taxonomy()
    if match == "auto":
        match = detect_problem_type(s, tax)
    return _eval(p.expr, s, side, match, tax)


def _side_count(s: Scenario, side: Side, test: AttrTest, tax: Taxonomy) -> int:
    comp = s.side(side)
    return sum(
        count for name, count in comp.counts.items() if tax.by_name[name].attribute(test.attr) == test.value
    )


def _eval(expr: Expr, s: Scenario, side: Side, match, tax: Taxonomy) -> bool:
    if isinstance(expr, And):
        return all(_eval(t, s, side, match, tax) for t in expr.terms)
    if isinstance(expr, Not):
        return not _eval(expr.term, s, side, match, tax)
    if isinstance(expr, SwerveRequired):
        return side is s.car_heading
    if isinstance(expr, CrossingIllegal):
        return s.crossing_is_legal(side) is False
    if isinstance(expr, AllOf):
        return _side_count(s, side, expr.test, tax) == s.side(side).total
    if isinstance(expr, AnyOf):
        return _side_count(s, side, expr.test, tax) > 0
    if isinstance(expr, CountCmp):
        return _CMP_FUNCS[expr.op](_side_count(s, side, expr.test, tax), expr.threshold)
    if isinstance(expr, TypeIs):
        return match is not None and match.kind is expr.ptype
    if isinstance(expr, PoleIs):
        return match is not None and match.kind.pole == expr.pole and match.pole_side is side
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Vectorized evaluation over key matrices
# ---------------------------------------------------------------------------


def _eval_matrix(expr: Expr, keys: np.ndarray, codes, poles, side: Side, tax: Taxonomy) -> np.ndarray:
    n_char = tax.size
    if isinstance(expr, And):
        out = _eval_matrix(expr.terms[0], keys, codes, poles, side, tax)
        for t in expr.terms[1:]:
            out = out & _eval_matrix(t, keys, codes, poles, side, tax)
        return out
    if isinstance(expr, Not):
        return ~_eval_matrix(expr.term, keys, codes, poles, side, tax)
    if isinstance(expr, SwerveRequired):
        return keys[:, 2 * n_char] == side.sign
    if isinstance(expr, CrossingIllegal):
        return keys[:, 2 * n_char + 1] == -side.sign
    counts = keys[:, :n_char] if side is Side.LEFT else keys[:, n_char:2 * n_char]
    if isinstance(expr, AllOf):
        mask = tax.attribute_mask(expr.test.attr, expr.test.value)
        return counts[:, ~mask].sum(axis=1) == 0
    if isinstance(expr, AnyOf):
        mask = tax.attribute_mask(expr.test.attr, expr.test.value)
        return counts[:, mask].sum(axis=1) > 0
    if isinstance(expr, CountCmp):
        mask = tax.attribute_mask(expr.test.attr, expr.test.value)
        return _CMP_FUNCS[expr.op](counts[:, mask].sum(axis=1), expr.threshold)
    if isinstance(expr, TypeIs):
        return codes == expr.ptype.index
    if isinstance(expr, PoleIs):
        return (codes == POLE_TO_TYPE[expr.pole].index) & (poles == side.sign)
    raise TypeError(f"not an expression node: {expr!r}")


# ---------------------------------------------------------------------------
# Choice-model feature vectors
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CmFeatureVector:
    """Left-minus-right features: per-tying-class count differences plus
    per-principle indicator differences (each in {-1, 0, +1})."""

    utility_diffs: np.ndarray
    principle_diffs: np.ndarray

    def concat(self) -> np.ndarray:
        return np.concatenate([self.utility_diffs, self.principle_diffs])


def build_cm_features(s: Scenario, spec, taxonomy: Taxonomy = None) -> CmFeatureVector:
    """Feature vector of a scenario under a choice-model spec.

    ``spec`` provides ``tying`` (character name -> class id), ``n_classes``
    and ``principles``.
    """
    tax = taxonomy or active_taxonomy()
    util = np.zeros(spec.n_classes)
    for name, count in s.left.counts.items():
        util[spec.tying[name]] += count
    for name, count in s.right.counts.items():
        util[spec.tying[name]] -= count
    match = detect_problem_type(s, tax)
    pdiffs = np.zeros(len(spec.principles))
    for i, p in enumerate(spec.principles):
        pdiffs[i] = int(_eval(p.expr, s, Side.LEFT, match, tax)) - int(_eval(p.expr, s, Side.RIGHT, match, tax))
    return CmFeatureVector(util, pdiffs)


class FeatureContext:
    """Per-dataset cache of everything derived from the key matrix.

    Deduplicates rows to unique dilemmas, runs problem-type detection once,
    and memoizes principle indicator columns by source text, so repeated
    fits and evaluations over the same data stay cheap.
    """

    def __init__(self, keys: np.ndarray, taxonomy: Taxonomy = None):
        self.tax = taxonomy or active_taxonomy()
        keys = np.asarray(keys)
        if keys.ndim != 2 or keys.shape[1] != 2 * self.tax.size + 2:
            raise ValidationError(f"key matrix must be (n, {2 * self.tax.size + 2})")
        self.keys = keys
        self.unique_keys, self.inverse = np.unique(keys, axis=0, return_inverse=True)
        self.inverse = self.inverse.ravel()
        self.codes, self.poles = detect_problem_type_matrix(self.unique_keys, self.tax)
        n_char = self.tax.size
        self._delta_unique = (
            self.unique_keys[:, :n_char].astype(np.float64) - self.unique_keys[:, n_char:2 * n_char]
        )
        self._principle_cols: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def __len__(self) -> int:
        return len(self.keys)

    def principle_sides_unique(self, p: PrincipleSpec) -> tuple[np.ndarray, np.ndarray]:
        """(f_left, f_right) boolean columns over unique dilemmas."""
        cached = self._principle_cols.get(p.source)
        if cached is None:
            f_left = _eval_matrix(p.expr, self.unique_keys, self.codes, self.poles, Side.LEFT, self.tax)
            f_right = _eval_matrix(p.expr, self.unique_keys, self.codes, self.poles, Side.RIGHT, self.tax)
            cached = (f_left, f_right)
            self._principle_cols[p.source] = cached
        return cached

    def principle_sides(self, p: PrincipleSpec) -> tuple[np.ndarray, np.ndarray]:
        """(f_left, f_right) boolean columns over all rows."""
        f_left, f_right = self.principle_sides_unique(p)
        return f_left[self.inverse], f_right[self.inverse]

    def principle_diff_unique(self, p: PrincipleSpec) -> np.ndarray:
        f_left, f_right = self.principle_sides_unique(p)
        return f_left.astype(np.float64) - f_right

    def design_matrix_unique(self, spec) -> np.ndarray:
        """(U, k) matrix of CM features over unique dilemmas."""
        tying_cols = np.zeros((self.tax.size, spec.n_classes))
        for name, class_id in spec.tying.items():
            tying_cols[self.tax.index[name], class_id] = 1.0
        blocks = [self._delta_unique @ tying_cols]
        for p in spec.principles:
            blocks.append(self.principle_diff_unique(p)[:, None])
        return np.hstack(blocks)

    def design_matrix(self, spec) -> np.ndarray:
        """(N, k) matrix of CM features over all rows."""
        return self.design_matrix_unique(spec)[self.inverse]

    def side_indicator_columns(self, principles) -> np.ndarray:
        """(N, 2 * len(principles)) per-side indicators, for network inputs."""
        cols = []
        for p in principles:
            f_left, f_right = self.principle_sides(p)
            cols.append(f_left.astype(np.float64))
            cols.append(f_right.astype(np.float64))
        if not cols:
            return np.zeros((len(self.keys), 0))
        return np.column_stack(cols)


def design_matrix(keys: np.ndarray, spec, taxonomy: Taxonomy = None) -> np.ndarray:
    """One-shot (N, k) design matrix; use :class:`FeatureContext` to amortize."""
    return FeatureContext(keys, taxonomy).design_matrix(spec)


# ---------------------------------------------------------------------------
# Stock principles
# ---------------------------------------------------------------------------

INTERVENTION_SOURCE = "principle intervention: swerve_required"
UNLAWFUL_SOURCE = "principle unlawful: crossing_illegal"


def intervention_principle() -> PrincipleSpec:
    """Penalizable preference for allowing harm over swerving to cause it."""
    return parse_principle(INTERVENTION_SOURCE)


def unlawful_principle() -> PrincipleSpec:
    """Penalizable indicator for the side that crosses against the signal."""
    return parse_principle(UNLAWFUL_SOURCE)


def type_pole_principle(ptype: ProblemType) -> PrincipleSpec:
    """Side-level indicator that this side holds the positive pole of ptype."""
    return parse_principle(f"principle {ptype.pole}_pole: type({ptype.value}) & pole({ptype.pole})")


def default_type_principles() -> tuple[PrincipleSpec, ...]:
    """The six problem-type pole features, in detection precedence order."""
    return tuple(type_pole_principle(t) for t in ProblemType)
