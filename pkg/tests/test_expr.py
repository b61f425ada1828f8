"""Expression module tests: structure, evaluation, parsing, signatures."""

import math

import numpy as np
import pytest

from anamwp import expr
from anamwp.expr import (
    Constant,
    DivisionByZero,
    Internal,
    InvalidPrefixError,
    Leaf,
    NonFiniteResult,
    NumberSlot,
    Operator,
    ParseError,
    UnboundSlot,
)
from oracles import eval_infix


def toks(text):
    return expr.from_text(text)


# --- token and tree structure -------------------------------------------


def test_operator_rejects_unknown_symbol():
    with pytest.raises(ValueError):
        Operator("%")


def test_constant_symbol_format():
    assert Constant(3.14).symbol == "C:3.14"
    assert Constant(1.0).symbol == "C:1"


def test_validate_prefix_hand_cases():
    assert expr.validate_prefix(toks("/ - N0 N1 N2"))
    assert expr.validate_prefix(toks("N0"))
    assert not expr.validate_prefix(toks("/ N0"))            # missing operand
    assert not expr.validate_prefix(toks("N0 N1"))           # extra token
    assert not expr.validate_prefix(toks("+ N0 N1 N2"))      # extra token
    assert not expr.validate_prefix(())
    with pytest.raises(TypeError):
        expr.validate_prefix(["+", "N0", "N1"])


def test_every_strict_truncation_of_a_valid_prefix_is_invalid():
    rng = np.random.default_rng(0)
    for _ in range(200):
        eq = expr.random_prefix(rng, max_depth=4, n_slots=5)
        assert expr.validate_prefix(eq)
        for cut in range(1, len(eq)):
            assert not expr.validate_prefix(eq[:cut])


def test_prefix_tree_round_trip():
    rng = np.random.default_rng(1)
    for _ in range(300):
        eq = expr.random_prefix(rng, max_depth=5, n_slots=6, constants=(3.14,))
        tree = expr.prefix_to_tree(eq)
        assert expr.tree_to_prefix(tree) == eq


def test_prefix_to_tree_rejects_malformed():
    with pytest.raises(InvalidPrefixError):
        expr.prefix_to_tree(toks("+ N0"))
    with pytest.raises(InvalidPrefixError):
        expr.prefix_to_tree(toks("N0 N1"))


# --- evaluation ----------------------------------------------------------


def test_evaluate_hand_cases():
    assert expr.evaluate(toks("/ - N0 N1 N2"), [100, 10, 15]) == pytest.approx(6.0)
    assert expr.evaluate(toks("* N0 N1"), [4, 0.5]) == pytest.approx(2.0)
    assert expr.evaluate(toks("^ N0 N1"), [2, 10]) == pytest.approx(1024.0)
    assert expr.evaluate(toks("* C:3.14 ^ N0 C:2"), [5]) == pytest.approx(78.5)


def test_evaluate_division_by_near_zero_raises():
    with pytest.raises(DivisionByZero):
        expr.evaluate(toks("/ N0 N1"), [1.0, 1e-13])
    # 1e-12 is the threshold; just above it divides fine
    assert expr.evaluate(toks("/ N0 N1"), [1.0, 1e-11]) == pytest.approx(1e11)


def test_evaluate_unbound_slot_raises():
    with pytest.raises(UnboundSlot):
        expr.evaluate(toks("+ N0 N3"), [1.0, 2.0])


def test_evaluate_nonfinite_raises():
    with pytest.raises(NonFiniteResult):
        expr.evaluate(toks("* N0 N0"), [1e300])
    with pytest.raises(NonFiniteResult):
        expr.evaluate(toks("^ N0 N1"), [-2.0, 0.5])


def test_count_operators():
    assert expr.count_operators(toks("/ - N0 N1 N2")) == 2
    assert expr.count_operators(toks("N0")) == 0


# --- infix parsing and rendering ----------------------------------------


def test_parse_infix_precedence_and_associativity():
    assert expr.evaluate_tree(expr.parse_infix("2 + 3 * 4"), ()) == 14.0
    assert expr.evaluate_tree(expr.parse_infix("2 ^ 3 ^ 2"), ()) == 512.0
    assert expr.evaluate_tree(expr.parse_infix("8 - 3 - 2"), ()) == 3.0
    assert expr.evaluate_tree(expr.parse_infix("8 / 2 / 2"), ()) == 2.0
    assert expr.evaluate_tree(expr.parse_infix("(2 + 3) * 4"), ()) == 20.0


def test_parse_infix_maps_literals_to_slots_earliest_first():
    tree = expr.parse_infix("(100 - 10) / 15", [100.0, 10.0, 15.0])
    assert expr.tree_to_prefix(tree) == toks("/ - N0 N1 N2")
    # duplicated value binds to the earliest slot every time
    tree = expr.parse_infix("5 + 5", [5.0, 5.0])
    assert expr.tree_to_prefix(tree) == toks("+ N0 N0")


def test_parse_infix_unmatched_literal_becomes_constant():
    tree = expr.parse_infix("3.14 * 5", [5.0])
    assert expr.tree_to_prefix(tree) == toks("* C:3.14 N0")
    assert expr.tree_to_prefix(tree)[1] == Constant(3.14)


def test_parse_infix_accepts_equation_prefix_and_unicode_operators():
    tree = expr.parse_infix("x=(100−10)÷15", [100.0, 10.0, 15.0])
    assert expr.tree_to_prefix(tree) == toks("/ - N0 N1 N2")
    tree = expr.parse_infix("X = 2×3", [2.0, 3.0])
    assert expr.tree_to_prefix(tree) == toks("* N0 N1")


def test_parse_infix_errors_carry_positions():
    with pytest.raises(ParseError) as e:
        expr.parse_infix("2 + ")
    assert e.value.position == 4
    with pytest.raises(ParseError):
        expr.parse_infix("(2 + 3")
    with pytest.raises(ParseError):
        expr.parse_infix("2 + 3)")
    with pytest.raises(ParseError):
        expr.parse_infix("2 + fish")


def test_render_infix_minimal_parens_hand_cases():
    t = expr.prefix_to_tree(toks("/ - N0 N1 N2"))
    assert expr.render_infix(t) == "(N0 - N1) / N2"
    assert expr.render_infix(t, [100.0, 10.0, 15.0]) == "(100 - 10) / 15"
    t = expr.prefix_to_tree(toks("+ N0 * N1 N2"))
    assert expr.render_infix(t) == "N0 + N1 * N2"
    t = expr.prefix_to_tree(toks("^ ^ N0 N1 N2"))
    assert expr.render_infix(t) == "(N0 ^ N1) ^ N2"
    t = expr.prefix_to_tree(toks("^ N0 ^ N1 N2"))
    assert expr.render_infix(t) == "N0 ^ N1 ^ N2"


def test_render_parse_round_trip_preserves_tree_exactly():
    rng = np.random.default_rng(2)
    for _ in range(400):
        eq = expr.random_prefix(rng, max_depth=5, n_slots=4, constants=(3.14,))
        n_slots = max((t.index for t in eq if isinstance(t, NumberSlot)), default=-1) + 1
        values = [float(v) for v in rng.choice(np.arange(2, 100), size=max(n_slots, 1), replace=False)]
        tree = expr.prefix_to_tree(eq)
        text = expr.render_infix(tree, values)
        assert expr.tree_to_prefix(expr.parse_infix(text, values)) == eq


def test_evaluator_agrees_with_independent_infix_oracle():
    rng = np.random.default_rng(3)
    checked = 0
    while checked < 500:
        eq = expr.random_prefix(rng, max_depth=4, n_slots=4)
        n_slots = max((t.index for t in eq if isinstance(t, NumberSlot)), default=-1) + 1
        values = [float(v) for v in rng.choice(np.arange(15, 95), size=max(n_slots, 1), replace=False) / 10.0]
        tree = expr.prefix_to_tree(eq)
        try:
            got = expr.evaluate_tree(tree, values)
        except expr.EvalError:
            continue
        if abs(got) > 1e12:
            continue
        want = eval_infix(expr.render_infix(tree, values))
        assert got == pytest.approx(want, rel=1e-9)
        checked += 1
    assert checked == 500


# --- operator signatures --------------------------------------------------


def test_signature_preorder_walk():
    eq = toks("* + N0 N1 - N2 N3")
    assert expr.signature(eq, 1) == ("*",)
    assert expr.signature(eq, 2) == ("*", "+")
    assert expr.signature(eq, 3) == ("*", "+", "-")
    assert expr.signature(toks("+ N0 N1"), 2) is None
    assert expr.signature(toks("N0"), 1) is None


def test_signature_strict_left_child_mode():
    eq = toks("* N0 + N1 N2")  # second operator is the right child
    assert expr.signature(eq, 2) == ("*", "+")
    assert expr.signature(eq, 2, strict_left_child=True) is None
    eq = toks("* + N0 N1 N2")
    assert expr.signature(eq, 2, strict_left_child=True) == ("*", "+")
    assert expr.signature(eq, 1, strict_left_child=True) == ("*",)


def test_signature_rejects_bad_depth():
    with pytest.raises(ValueError):
        expr.signature(toks("+ N0 N1"), 0)
    with pytest.raises(ValueError):
        expr.signature(toks("+ N0 N1"), 4)


# --- canonical text form ---------------------------------------------------


def test_text_round_trip():
    rng = np.random.default_rng(4)
    for _ in range(200):
        eq = expr.random_prefix(rng, max_depth=4, n_slots=5, constants=(1.0, 3.14))
        assert expr.from_text(expr.to_text(eq)) == eq


def test_from_text_rejects_unknown_tokens():
    with pytest.raises(ValueError):
        expr.from_text("+ N0 banana")


def test_random_prefix_is_always_valid():
    rng = np.random.default_rng(5)
    for _ in range(300):
        eq = expr.random_prefix(rng, max_depth=5, n_slots=3)
        assert expr.validate_prefix(eq)
        assert expr.count_operators(eq) >= 1
