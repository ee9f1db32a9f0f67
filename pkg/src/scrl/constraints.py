"""Linear density constraints: a small DSL, CNF normalization and violation degrees.

Formulas are written over per-region densities ``rho[i]`` (1-based) and
normalized into a conjunction of clauses, each clause a disjunction of
atomic constraints ``a . rho <= b``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np


class ConstraintSyntaxError(ValueError):
    """Raised for malformed constraint text. Carries the 1-based line/column."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


# ---------------------------------------------------------------------------
# Expression tree
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Linear:
    """``sum(coeffs[i] * rho[i]) + const`` with 1-based region keys."""

    coeffs: tuple[tuple[int, float], ...] = ()
    const: float = 0.0

    @staticmethod
    def of(terms: dict[int, float], const: float = 0.0) -> "Linear":
        return Linear(tuple(sorted((k, v) for k, v in terms.items() if v != 0.0)), const)

    def combine(self, other: "Linear", sign: float = 1.0) -> "Linear":
        terms = dict(self.coeffs)
        for k, v in other.coeffs:
            terms[k] = terms.get(k, 0.0) + sign * v
        return Linear.of(terms, self.const + sign * other.const)

    def scale(self, factor: float) -> "Linear":
        return Linear.of({k: factor * v for k, v in self.coeffs}, factor * self.const)


@dataclass(frozen=True)
class Compare:
    op: str  # one of "<=", ">=", "=="
    lhs: Linear
    rhs: Linear
    label: str | None = None


@dataclass(frozen=True)
class Const:
    value: bool


@dataclass(frozen=True)
class Not:
    arg: "Node"


@dataclass(frozen=True)
class And:
    args: tuple["Node", ...]


@dataclass(frozen=True)
class Or:
    args: tuple["Node", ...]


@dataclass(frozen=True)
class Implies:
    premise: "Node"
    conclusion: "Node"


@dataclass(frozen=True)
class Labeled:
    label: str
    arg: "Node"


Node = Compare | Const | Not | And | Or | Implies | Labeled


# ---------------------------------------------------------------------------
# Normalized form
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AtomicConstraint:
    """``coeffs . rho <= bound``."""

    coeffs: tuple[float, ...]
    bound: float
    label: str | None = None

    def __post_init__(self):
        if not self.is_sentinel and not any(self.coeffs):
            raise ValueError("atomic constraint with all-zero coefficients must be a TRUE/FALSE sentinel")

    @property
    def is_sentinel(self) -> bool:
        return not any(self.coeffs) and self.bound in (0.0, -1.0)

    @property
    def is_true(self) -> bool:
        return not any(self.coeffs) and self.bound == 0.0

    @property
    def a(self) -> np.ndarray:
        return np.asarray(self.coeffs, dtype=float)

    def describe(self) -> str:
        if self.is_true:
            return "TRUE"
        if not any(self.coeffs):
            return "FALSE"
        parts = []
        for i, c in enumerate(self.coeffs, start=1):
            if c == 0:
                continue
            sign = "-" if c < 0 else "+"
            mag = abs(c)
            term = f"rho[{i}]" if mag == 1 else f"{mag:g}*rho[{i}]"
            parts.append(f"{sign} {term}")
        text = " ".join(parts)
        text = text[2:] if text.startswith("+ ") else "-" + text[2:]
        return f"{text} <= {self.bound:g}"


def true_atom(m: int) -> AtomicConstraint:
    return AtomicConstraint((0.0,) * m, 0.0)


def false_atom(m: int) -> AtomicConstraint:
    return AtomicConstraint((0.0,) * m, -1.0)


@dataclass(frozen=True)
class ConstraintFormula:
    """Conjunction of clauses; each clause is a disjunction of atomic constraints."""

    clauses: tuple[tuple[AtomicConstraint, ...], ...]
    m: int
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for k, clause in enumerate(self.clauses):
            if not clause:
                raise ValueError(f"clause {k} is empty")
            for atom in clause:
                if len(atom.coeffs) != self.m:
                    raise ValueError(f"atom in clause {k} has {len(atom.coeffs)} coefficients, expected {self.m}")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(_clause_label(c, k) for k, c in enumerate(self.clauses)))
        elif len(self.labels) != len(self.clauses):
            raise ValueError("one label per clause required")

    @property
    def atoms(self) -> list[AtomicConstraint]:
        """Atoms in clause-major order (the flat ledger order)."""
        return [atom for clause in self.clauses for atom in clause]

    @property
    def keys(self) -> list[tuple[int, int]]:
        return [(c, d) for c, clause in enumerate(self.clauses) for d in range(len(clause))]

    @property
    def clause_of_atom(self) -> np.ndarray:
        return np.array([c for c, _ in self.keys], dtype=int)

    @property
    def A(self) -> np.ndarray:
        if not self.clauses:
            return np.zeros((0, self.m))
        return np.array([atom.coeffs for atom in self.atoms], dtype=float)

    @property
    def b(self) -> np.ndarray:
        return np.array([atom.bound for atom in self.atoms], dtype=float)

    def regions(self) -> list[int]:
        """1-based regions with a nonzero coefficient anywhere in the formula."""
        A = self.A
        return [i + 1 for i in range(self.m) if A.size and np.any(A[:, i] != 0)]

    def scaled(self, factor: float) -> "ConstraintFormula":
        """Same formula with every non-sentinel bound multiplied by ``factor``."""
        clauses = tuple(
            tuple(a if a.is_sentinel else AtomicConstraint(a.coeffs, a.bound * factor, a.label) for a in clause)
            for clause in self.clauses
        )
        return ConstraintFormula(clauses, self.m, self.labels)

    def as_tree(self) -> Node:
        """Rebuild an expression tree that normalizes back to this formula."""
        return And(tuple(Or(tuple(_atom_tree(a) for a in clause)) for clause in self.clauses))


def _atom_tree(atom: AtomicConstraint) -> Node:
    if atom.is_sentinel:
        return Const(atom.is_true)
    lhs = Linear.of({i + 1: c for i, c in enumerate(atom.coeffs)})
    return Compare("<=", lhs, Linear((), atom.bound), atom.label)


def _clause_label(clause: Sequence[AtomicConstraint], index: int) -> str:
    names = []
    for atom in clause:
        if atom.label and atom.label not in names:
            names.append(atom.label)
    return "|".join(names) if names else f"clause{index}"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<newline>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<rho>rho\s*\[\s*(?P<idx>-?\d+)\s*\])
  | (?P<number>(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?)
  | (?P<op><=|>=|==|[-+*()])
  | (?P<label>\[\s*[A-Za-z_][A-Za-z0-9_\-]*\s*\])
  | (?P<word>[A-Za-z_][A-Za-z0-9_]*)
    """,
    re.VERBOSE,
)

_KEYWORDS = {"IF", "THEN", "AND", "OR", "NOT", "TRUE", "FALSE"}
_FORMULA_TOKENS = {"<=", ">=", "==", "label"} | _KEYWORDS


@dataclass
class _Token:
    kind: str
    text: str
    line: int
    col: int
    index: int = 0


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        match = _TOKEN_RE.match(text, pos)
        col = pos - line_start + 1
        if match is None:
            raise ConstraintSyntaxError(f"unexpected character {text[pos]!r}", line, col)
        kind = match.lastgroup
        if kind == "idx":
            kind = "rho"
        chunk = match.group(0)
        if kind == "newline":
            line += 1
            line_start = match.end()
        elif kind == "rho":
            tokens.append(_Token("rho", chunk, line, col, int(match.group("idx"))))
        elif kind == "word":
            upper = chunk.upper()
            if upper not in _KEYWORDS:
                raise ConstraintSyntaxError(f"unknown word {chunk!r}", line, col)
            tokens.append(_Token(upper, chunk, line, col))
        elif kind == "label":
            tokens.append(_Token("label", chunk[1:-1].strip(), line, col))
        elif kind in ("number", "op"):
            tokens.append(_Token(kind if kind == "number" else chunk, chunk, line, col))
        pos = match.end()
    tokens.append(_Token("eof", "", line, pos - line_start + 1))
    return tokens


class _Parser:
    # precedence (loosest first): IF/THEN, OR, AND, NOT / [label]
    def __init__(self, text: str, m: int):
        self.tokens = _tokenize(text)
        self.pos = 0
        self.m = m

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def take(self, kind: str | None = None) -> _Token:
        tok = self.tokens[self.pos]
        if kind is not None and tok.kind != kind:
            shown = tok.text or "end of input"
            raise ConstraintSyntaxError(f"expected {kind!r}, found {shown!r}", tok.line, tok.col)
        self.pos += 1
        return tok

    def error(self, message: str, tok: _Token | None = None):
        tok = tok or self.peek()
        return ConstraintSyntaxError(message, tok.line, tok.col)

    def parse(self) -> Node:
        if self.peek().kind == "eof":
            raise self.error("empty constraint text")
        node = self.implication()
        if self.peek().kind != "eof":
            raise self.error(f"unexpected token {self.peek().text!r}")
        return node

    def implication(self) -> Node:
        if self.peek().kind == "IF":
            self.take("IF")
            premise = self.disjunction()
            self.take("THEN")
            return Implies(premise, self.implication())
        left = self.disjunction()
        if self.peek().kind == "THEN":
            self.take("THEN")
            return Implies(left, self.implication())
        return left

    def disjunction(self) -> Node:
        args = [self.conjunction()]
        while self.peek().kind == "OR":
            self.take()
            args.append(self.conjunction())
        return args[0] if len(args) == 1 else Or(tuple(args))

    def conjunction(self) -> Node:
        args = [self.unary()]
        while self.peek().kind == "AND":
            self.take()
            args.append(self.unary())
        return args[0] if len(args) == 1 else And(tuple(args))

    def unary(self) -> Node:
        tok = self.peek()
        if tok.kind == "NOT":
            self.take()
            return Not(self.unary())
        if tok.kind == "label":
            self.take()
            return Labeled(tok.text, self.unary())
        if tok.kind in ("TRUE", "FALSE"):
            self.take()
            return Const(tok.kind == "TRUE")
        if tok.kind == "(" and self._paren_is_formula():
            self.take("(")
            node = self.implication()
            self.take(")")
            return node
        return self.atom()

    def _paren_is_formula(self) -> bool:
        # '(' groups a formula iff its span holds a comparison or logical token;
        # otherwise it groups a linear expression such as (rho[1] + rho[2]).
        depth = 0
        for tok in self.tokens[self.pos:]:
            if tok.kind == "(":
                depth += 1
            elif tok.kind == ")":
                depth -= 1
                if depth == 0:
                    return False
            elif tok.kind in _FORMULA_TOKENS:
                return True
        return True

    def atom(self) -> Node:
        start = self.peek()
        lhs = self.expr()
        op = self.peek()
        if op.kind not in ("<=", ">=", "=="):
            raise self.error("expected comparison operator '<=', '>=' or '=='", op)
        self.take()
        rhs = self.expr()
        if not lhs.coeffs and not rhs.coeffs:
            raise self.error("comparison does not mention any rho[i]", start)
        return Compare(op.kind, lhs, rhs)

    def expr(self) -> Linear:
        sign = 1.0
        if self.peek().kind in ("+", "-"):
            sign = -1.0 if self.take().kind == "-" else 1.0
        total = self.term().scale(sign)
        while self.peek().kind in ("+", "-"):
            sign = -1.0 if self.take().kind == "-" else 1.0
            total = total.combine(self.term(), sign)
        return total

    def term(self) -> Linear:
        tok = self.peek()
        if tok.kind == "number":
            self.take()
            value = float(tok.text)
            if self.peek().kind == "*":
                self.take()
                nxt = self.peek()
                if nxt.kind == "rho":
                    return self.rho().scale(value)
                if nxt.kind == "(":
                    return self.paren_expr().scale(value)
                raise self.error("non-linear term: coefficient must multiply rho[i]", nxt)
            return Linear((), value)
        if tok.kind == "rho":
            lin = self.rho()
            if self.peek().kind == "*":
                nxt = self.tokens[self.pos + 1]
                if nxt.kind == "number":
                    self.take()
                    self.take()
                    return lin.scale(float(nxt.text))
                raise self.error("non-linear term: rho[i] * rho[j] is not allowed", self.peek())
            return lin
        if tok.kind == "(":
            return self.paren_expr()
        raise self.error(f"expected number or rho[i], found {tok.text or 'end of input'!r}", tok)

    def paren_expr(self) -> Linear:
        self.take("(")
        inner = self.expr()
        self.take(")")
        return inner

    def rho(self) -> Linear:
        tok = self.take("rho")
        if not 1 <= tok.index <= self.m:
            raise self.error(f"region index {tok.index} out of range 1..{self.m}", tok)
        return Linear(((tok.index, 1.0),), 0.0)


def parse(text: str, m: int) -> Node:
    """Parse constraint DSL text over ``m`` regions into an expression tree."""
    if m < 1:
        raise ValueError("region count must be positive")
    return _Parser(text, m).parse()


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------


def _compare_atoms(node: Compare, m: int, label: str | None) -> list[tuple[np.ndarray, float]]:
    """Expand a comparison into ``a . rho <= b`` rows (two rows for ``==``)."""

    def row(lin: Linear) -> tuple[np.ndarray, float]:
        a = np.zeros(m)
        for k, v in lin.coeffs:
            a[k - 1] = v
        return a, -lin.const

    diff = node.lhs.combine(node.rhs, -1.0)  # lhs - rhs
    if node.op == "<=":
        return [row(diff)]
    if node.op == ">=":
        return [row(diff.scale(-1.0))]
    return [row(diff), row(diff.scale(-1.0))]


def _make_atom(a: np.ndarray, b: float, label: str | None) -> AtomicConstraint:
    coeffs = tuple(float(x) + 0.0 for x in a)  # + 0.0 folds -0.0
    if not any(coeffs):
        # constant comparison such as rho[1] - rho[1] <= 3
        return AtomicConstraint(coeffs, 0.0 if 0.0 <= b else -1.0)
    return AtomicConstraint(coeffs, float(b) + 0.0, label)


def _cnf(node: Node, negated: bool, m: int, margin: float, label: str | None) -> list[list[AtomicConstraint]]:
    """CNF of ``node`` (or its negation) as a list of clauses."""
    if isinstance(node, Labeled):
        return _cnf(node.arg, negated, m, margin, node.label)
    if isinstance(node, Const):
        value = node.value != negated
        return [[true_atom(m)]] if value else [[false_atom(m)]]
    if isinstance(node, Not):
        return _cnf(node.arg, not negated, m, margin, label)
    if isinstance(node, Implies):
        return _cnf(Or((Not(node.premise), node.conclusion)), negated, m, margin, label)
    if isinstance(node, Compare):
        rows = _compare_atoms(node, m, label)
        lab = node.label or label
        if not negated:
            return [[_make_atom(a, b, lab)] for a, b in rows]
        # not(a.rho <= b)  =>  (-a).rho <= -b - margin; not(A and B) => notA or notB
        return [[_make_atom(-a, -b - margin, lab) for a, b in rows]]
    if isinstance(node, (And, Or)):
        conj = isinstance(node, And) != negated
        parts = [_cnf(arg, negated, m, margin, label) for arg in node.args]
        if conj:
            return [clause for part in parts for clause in part]
        clauses: list[list[AtomicConstraint]] = [[]]
        for part in parts:
            clauses = [left + right for left in clauses for right in part]
        return clauses
    raise TypeError(f"unknown node {node!r}")


def _simplify_clause(clause: list[AtomicConstraint], m: int) -> list[AtomicConstraint]:
    kept = [atom for atom in clause if not (atom.is_sentinel and not atom.is_true)]
    if any(atom.is_true for atom in kept):
        return [true_atom(m)] if len(kept) == 1 else kept
    return kept or [false_atom(m)]


def normalize(tree: Node, m: int, strict_margin: float = 0.0) -> ConstraintFormula:
    """Rewrite an expression tree into CNF over weak linear atoms.

    Implications become disjunctions, negations are pushed onto atoms and a
    negated atom ``a.rho <= b`` turns into ``-a.rho <= -b - strict_margin``.
    FALSE disjuncts are dropped (a clause left empty keeps a FALSE atom).
    """
    if strict_margin < 0:
        raise ValueError("strict_margin must be >= 0")
    clauses = [_simplify_clause(c, m) for c in _cnf(tree, False, m, strict_margin, None)]
    if not clauses:
        clauses = [[true_atom(m)]]
    return ConstraintFormula(tuple(tuple(c) for c in clauses), m)


def load_formula(text: str, m: int, strict_margin: float = 0.0) -> ConstraintFormula:
    return normalize(parse(text, m), m, strict_margin)


# ---------------------------------------------------------------------------
# Violation degrees
# ---------------------------------------------------------------------------


def violation_degree(phi: AtomicConstraint, rho) -> float:
    """``a . rho - b``; positive means violated."""
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (len(phi.coeffs),):
        raise ValueError(f"density has shape {rho.shape}, constraint expects {len(phi.coeffs)} regions")
    return float(phi.a @ rho - phi.bound)


def atom_violations(formula: ConstraintFormula, rho) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (formula.m,):
        raise ValueError(f"density has shape {rho.shape}, formula expects {formula.m} regions")
    return formula.A @ rho - formula.b


def formula_violation(formula: ConstraintFormula, rho) -> tuple[float, list[float]]:
    """Cons.Vio: sum over clauses of ``max(0, min over disjuncts of Vio)``."""
    vio = atom_violations(formula, rho)
    per_clause = []
    start = 0
    for clause in formula.clauses:
        per_clause.append(max(0.0, float(np.min(vio[start:start + len(clause)]))))
        start += len(clause)
    return float(sum(per_clause)), per_clause


def label_violation(formula: ConstraintFormula, rho) -> dict[str, float]:
    """Positive-part violation of each distinct labelled atom, summed per label.

    Atoms duplicated by CNF distribution are counted once. Unlabelled atoms
    and sentinels are skipped.
    """
    rho = np.asarray(rho, dtype=float)
    seen: set[tuple] = set()
    totals: dict[str, float] = {}
    for atom in formula.atoms:
        if atom.label is None or atom.is_sentinel:
            continue
        key = (atom.coeffs, atom.bound, atom.label)
        totals.setdefault(atom.label, 0.0)
        if key in seen:
            continue
        seen.add(key)
        totals[atom.label] += max(0.0, violation_degree(atom, rho))
    return totals


def evaluate_tree(tree: Node, rho, strict_margin: float = 0.0, negated: bool = False) -> bool:
    """Direct boolean evaluation of a tree (independent of CNF conversion)."""
    rho = np.asarray(rho, dtype=float)
    if isinstance(tree, Labeled):
        return evaluate_tree(tree.arg, rho, strict_margin, negated)
    if isinstance(tree, Const):
        return tree.value != negated
    if isinstance(tree, Not):
        return evaluate_tree(tree.arg, rho, strict_margin, not negated)
    if isinstance(tree, Implies):
        premise = evaluate_tree(tree.premise, rho, strict_margin, False)
        value = (not premise) or evaluate_tree(tree.conclusion, rho, strict_margin, False)
        if not negated:
            return value
        # negation of an implication: premise and not conclusion
        return evaluate_tree(tree.premise, rho, strict_margin, False) and evaluate_tree(
            tree.conclusion, rho, strict_margin, True
        )
    if isinstance(tree, And):
        results = [evaluate_tree(a, rho, strict_margin, negated) for a in tree.args]
        return any(results) if negated else all(results)
    if isinstance(tree, Or):
        results = [evaluate_tree(a, rho, strict_margin, negated) for a in tree.args]
        return all(results) if negated else any(results)
    if isinstance(tree, Compare):
        lhs = sum(v * rho[k - 1] for k, v in tree.lhs.coeffs) + tree.lhs.const
        rhs = sum(v * rho[k - 1] for k, v in tree.rhs.coeffs) + tree.rhs.const
        if tree.op == "<=":
            holds = [lhs <= rhs]
            neg = [lhs >= rhs + strict_margin]
        elif tree.op == ">=":
            holds = [lhs >= rhs]
            neg = [lhs <= rhs - strict_margin]
        else:
            holds = [lhs <= rhs, lhs >= rhs]
            neg = [lhs >= rhs + strict_margin, lhs <= rhs - strict_margin]
        return any(neg) if negated else all(holds)
    raise TypeError(f"unknown node {tree!r}")


def iter_atoms(formula: ConstraintFormula) -> Iterable[tuple[int, int, AtomicConstraint]]:
    for c, clause in enumerate(formula.clauses):
        for d, atom in enumerate(clause):
            yield c, d, atom
