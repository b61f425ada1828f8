"""Prefix equations over +, -, *, /, ^ with number slots and constants.

Equations are stored as pre-order token tuples. A token is an Operator,
a NumberSlot (Ni refers to the i-th number occurrence in the problem
text), or a Constant (a literal value such as 3.14 that the text does
not mention). Every operator is binary.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from typing import Union

__all__ = [
    "OPERATOR_SYMBOLS",
    "Operator",
    "NumberSlot",
    "Constant",
    "Token",
    "Leaf",
    "Internal",
    "ExprTree",
    "OperatorSignature",
    "ExprError",
    "InvalidPrefixError",
    "EvalError",
    "DivisionByZero",
    "UnboundSlot",
    "NonFiniteResult",
    "ParseError",
    "format_number",
    "validate_prefix",
    "prefix_to_tree",
    "tree_to_prefix",
    "count_operators",
    "evaluate",
    "evaluate_tree",
    "parse_infix",
    "render_infix",
    "signature",
    "to_text",
    "from_text",
    "random_prefix",
]

OPERATOR_SYMBOLS = ("+", "-", "*", "/", "^")

_PRECEDENCE = {"+": 1, "-": 1, "*": 2, "/": 2, "^": 3}
_RIGHT_ASSOC = {"^"}
_DIV_EPS = 1e-12


class ExprError(Exception):
    pass


class InvalidPrefixError(ExprError):
    pass


class EvalError(ExprError):
    pass


class DivisionByZero(EvalError):
    pass


class UnboundSlot(EvalError):
    pass


class NonFiniteResult(EvalError):
    pass


class ParseError(ExprError):
    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


def format_number(value: float) -> str:
    """Shortest faithful rendering; integers lose the trailing .0."""
    if value == int(value) and abs(value) < 1e15:
        return str(int(value))
    return repr(float(value))


@dataclass(frozen=True)
class Operator:
    symbol: str

    def __post_init__(self):
        if self.symbol not in OPERATOR_SYMBOLS:
            raise ValueError(f"unknown operator {self.symbol!r}")

    @property
    def precedence(self) -> int:
        return _PRECEDENCE[self.symbol]


@dataclass(frozen=True)
class NumberSlot:
    index: int

    def __post_init__(self):
        if self.index < 0:
            raise ValueError("slot index must be non-negative")

    @property
    def name(self) -> str:
        return f"N{self.index}"


@dataclass(frozen=True)
class Constant:
    value: float

    @property
    def symbol(self) -> str:
        return f"C:{format_number(self.value)}"


Token = Union[Operator, NumberSlot, Constant]


@dataclass(frozen=True)
class Leaf:
    token: Union[NumberSlot, Constant]


@dataclass(frozen=True)
class Internal:
    op: Operator
    left: "ExprTree"
    right: "ExprTree"


ExprTree = Union[Leaf, Internal]

# The first k operators along an equation's pre-order walk.
OperatorSignature = tuple[str, ...]


def _check_tokens(tokens) -> tuple:
    toks = tuple(tokens)
    for t in toks:
        if not isinstance(t, (Operator, NumberSlot, Constant)):
            raise TypeError(f"not an equation token: {t!r}")
    return toks


def validate_prefix(tokens) -> bool:
    """True iff tokens form exactly one well-formed pre-order expression."""
    toks = _check_tokens(tokens)
    if not toks:
        return False
    need = 1
    for t in toks:
        if need == 0:
            return False  # complete expression with tokens left over
        need -= 1
        if isinstance(t, Operator):
            need += 2
    return need == 0


def prefix_to_tree(tokens) -> ExprTree:
    toks = _check_tokens(tokens)
    pos = 0

    def build() -> ExprTree:
        nonlocal pos
        if pos >= len(toks):
            raise InvalidPrefixError(f"truncated prefix expression: {toks!r}")
        t = toks[pos]
        pos += 1
        if isinstance(t, Operator):
            left = build()
            right = build()
            return Internal(t, left, right)
        return Leaf(t)

    tree = build()
    if pos != len(toks):
        raise InvalidPrefixError(f"trailing tokens after position {pos}: {toks!r}")
    return tree


def tree_to_prefix(tree: ExprTree) -> tuple:
    out = []

    def walk(node):
        if isinstance(node, Leaf):
            out.append(node.token)
        else:
            out.append(node.op)
            walk(node.left)
            walk(node.right)

    walk(tree)
    return tuple(out)


def count_operators(tokens) -> int:
    return sum(1 for t in tokens if isinstance(t, Operator))


def _apply(op: str, a: float, b: float) -> float:
    if op == "+":
        return a + b
    if op == "-":
        return a - b
    if op == "*":
        return a * b
    if op == "/":
        if abs(b) < _DIV_EPS:
            raise DivisionByZero(f"division by {b!r}")
        return a / b
    try:
        return math.pow(a, b)
    except (ValueError, OverflowError) as e:
        raise NonFiniteResult(f"{a!r} ^ {b!r}: {e}") from None


def evaluate_tree(tree: ExprTree, slot_values) -> float:
    values = tuple(slot_values)

    def walk(node) -> float:
        if isinstance(node, Leaf):
            t = node.token
            if isinstance(t, Constant):
                return t.value
            if t.index >= len(values):
                raise UnboundSlot(f"{t.name} has no value (got {len(values)} slots)")
            return float(values[t.index])
        r = _apply(node.op.symbol, walk(node.left), walk(node.right))
        if not math.isfinite(r):
            raise NonFiniteResult(f"{node.op.symbol} produced {r!r}")
        return r

    return walk(tree)


def evaluate(tokens, slot_values) -> float:
    """Evaluate a prefix token tuple against slot values."""
    return evaluate_tree(prefix_to_tree(tokens), slot_values)


def signature(tokens, k: int, strict_left_child: bool = False):
    """First k operators of the pre-order walk, or None if fewer exist.

    With strict_left_child=True the walk instead follows the chain
    root -> root.left -> root.left.left ..., so the second symbol is
    accepted only when it truly is the root's left child.
    """
    if k not in (1, 2, 3):
        raise ValueError(f"signature depth must be 1, 2 or 3, got {k}")
    toks = _check_tokens(tokens)
    if not strict_left_child:
        ops = [t.symbol for t in toks if isinstance(t, Operator)]
        return tuple(ops[:k]) if len(ops) >= k else None
    node = prefix_to_tree(toks)
    chain = []
    while isinstance(node, Internal) and len(chain) < k:
        chain.append(node.op.symbol)
        node = node.left
    return tuple(chain) if len(chain) >= k else None


# --- canonical text form ------------------------------------------------


def to_text(tokens) -> str:
    parts = []
    for t in _check_tokens(tokens):
        if isinstance(t, Operator):
            parts.append(t.symbol)
        elif isinstance(t, NumberSlot):
            parts.append(t.name)
        else:
            parts.append(t.symbol)
    return " ".join(parts)


_SLOT_RE = re.compile(r"^N(\d+)$")


def from_text(text: str) -> tuple:
    tokens = []
    for part in text.split():
        if part in OPERATOR_SYMBOLS:
            tokens.append(Operator(part))
            continue
        m = _SLOT_RE.match(part)
        if m:
            tokens.append(NumberSlot(int(m.group(1))))
            continue
        if part.startswith("C:"):
            tokens.append(Constant(float(part[2:])))
            continue
        raise ValueError(f"unknown prefix token {part!r}")
    return tuple(tokens)


# --- infix parsing ------------------------------------------------------

_NORMALIZE = str.maketrans({"−": "-", "×": "*", "÷": "/"})
_NUM_RE = re.compile(r"\d+\.\d+|\.\d+|\d+")


def _match_slot(value: float, slot_values) -> int | None:
    for i, v in enumerate(slot_values):
        if math.isclose(value, v, rel_tol=1e-9, abs_tol=1e-12):
            return i
    return None


def parse_infix(text: str, slot_values=()) -> ExprTree:
    """Parse an infix equation string into an expression tree.

    Precedence ^ over * / over + -; ^ is right-associative, the rest
    left-associative. An optional leading "x=" is skipped. Numeric
    literals become the earliest NumberSlot whose value matches, else a
    Constant. Unary minus is not part of the grammar.
    """
    s = text.translate(_NORMALIZE)
    values = tuple(slot_values)
    pos = 0

    def skip_ws():
        nonlocal pos
        while pos < len(s) and s[pos].isspace():
            pos += 1

    def peek() -> str:
        skip_ws()
        return s[pos] if pos < len(s) else ""

    def parse_expr() -> ExprTree:
        nonlocal pos
        node = parse_term()
        while peek() in ("+", "-"):
            op = s[pos]
            pos += 1
            node = Internal(Operator(op), node, parse_term())
        return node

    def parse_term() -> ExprTree:
        nonlocal pos
        node = parse_factor()
        while peek() in ("*", "/"):
            op = s[pos]
            pos += 1
            node = Internal(Operator(op), node, parse_factor())
        return node

    def parse_factor() -> ExprTree:
        nonlocal pos
        node = parse_atom()
        if peek() == "^":
            pos += 1
            return Internal(Operator("^"), node, parse_factor())
        return node

    def parse_atom() -> ExprTree:
        nonlocal pos
        c = peek()
        if c == "(":
            pos += 1
            node = parse_expr()
            if peek() != ")":
                raise ParseError("expected ')'", pos)
            pos += 1
            return node
        m = _NUM_RE.match(s, pos)
        if not m:
            raise ParseError(f"expected a number or '(', found {c!r}" if c else "unexpected end of input", pos)
        pos = m.end()
        value = float(m.group())
        slot = _match_slot(value, values)
        if slot is not None:
            return Leaf(NumberSlot(slot))
        return Leaf(Constant(value))

    skip_ws()
    if s[pos : pos + 1] in ("x", "X"):
        after = pos + 1
        while after < len(s) and s[after].isspace():
            after += 1
        if after < len(s) and s[after] == "=":
            pos = after + 1
    tree = parse_expr()
    skip_ws()
    if pos != len(s):
        raise ParseError(f"unexpected trailing input {s[pos]!r}", pos)
    return tree


def render_infix(tree: ExprTree, slot_values=None) -> str:
    """Minimal-parenthesis infix text that reparses to the same tree.

    With slot_values, slots render as their literal values (the corpus
    file format); otherwise as N-names.
    """

    def leaf_text(t) -> str:
        if isinstance(t, Constant):
            return format_number(t.value)
        if slot_values is None:
            return t.name
        return format_number(float(slot_values[t.index]))

    def prec(node) -> int:
        return node.op.precedence if isinstance(node, Internal) else 99

    def walk(node) -> str:
        if isinstance(node, Leaf):
            return leaf_text(node.token)
        sym = node.op.symbol
        p = node.op.precedence
        right_assoc = sym in _RIGHT_ASSOC
        lt = walk(node.left)
        rt = walk(node.right)
        if prec(node.left) < p or (prec(node.left) == p and right_assoc):
            lt = f"({lt})"
        if prec(node.right) < p or (prec(node.right) == p and not right_assoc):
            rt = f"({rt})"
        return f"{lt} {sym} {rt}"

    return walk(tree)


def random_prefix(rng, max_depth: int, n_slots: int, ops=OPERATOR_SYMBOLS,
                  constants=(), leaf_prob: float = 0.4) -> tuple:
    """Random well-formed prefix equation, depth at most max_depth."""
    if n_slots < 1 and not constants:
        raise ValueError("need at least one slot or constant")

    def leaf():
        if constants and (n_slots == 0 or rng.random() < 0.2):
            return Leaf(Constant(constants[int(rng.integers(len(constants)))]))
        return Leaf(NumberSlot(int(rng.integers(n_slots))))

    def build(depth):
        if depth >= max_depth or rng.random() < leaf_prob:
            return leaf()
        op = Operator(ops[int(rng.integers(len(ops)))])
        return Internal(op, build(depth + 1), build(depth + 1))

    root = build(0)
    if isinstance(root, Leaf):  # keep at least one operator
        op = Operator(ops[int(rng.integers(len(ops)))])
        root = Internal(op, root, leaf())
    return tree_to_prefix(root)
