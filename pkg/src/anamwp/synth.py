"""Template-based synthetic word problem generator.

Each template pairs a text pattern with a gold prefix equation over the
numbers as they occur in the text. Samplers draw slot values that keep
every number in a problem distinct, so a generated file survives a
write/read round trip without literal-to-slot ambiguity.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import expr
from .corpus import ProblemRecord, number_map

__all__ = ["Template", "SynthConfig", "TEMPLATES", "generate_synthetic"]

_NAMES = ("Tom", "Lily", "Sam", "Maya", "Ravi", "Ana", "Leo", "Nina")
_ITEMS = ("pencils", "apples", "marbles", "stickers", "books", "oranges", "cards", "shells")


def _distinct_ints(rng, n, lo=2, hi=60):
    vals = rng.choice(np.arange(lo, hi), size=n, replace=False)
    return tuple(int(v) for v in vals)


def _price(rng):
    return float(rng.choice([0.5, 1.5, 2.5, 3.5, 4.5]))


@dataclass(frozen=True)
class Template:
    name: str
    topic: str
    text: str       # {0}, {1}, ... in their order of appearance
    equation: str   # prefix text over the induced slots
    sampler: Callable[[np.random.Generator], tuple]

    @property
    def n_ops(self) -> int:
        return expr.count_operators(expr.from_text(self.equation))


def _t(name, topic, text, equation, sampler):
    return Template(name, topic, text, equation, sampler)


TEMPLATES: tuple[Template, ...] = (
    # one operator
    _t("add-more", "collections",
       "{name} has {0} {item} and gets {1} more . How many {item} does {name} have now ?",
       "+ N0 N1", lambda rng: _distinct_ints(rng, 2)),
    _t("give-away", "collections",
       "{name} had {0} {item} and gave {1} of them away . How many {item} are left ?",
       "- N0 N1",
       lambda rng: tuple(sorted(_distinct_ints(rng, 2), reverse=True))),
    _t("unit-price", "shopping",
       "{name} buys {0} {item} at {1} dollars each . How much does {name} pay ?",
       "* N0 N1", lambda rng: (_distinct_ints(rng, 1, 2, 30)[0], _price(rng))),
    _t("equal-share", "sharing",
       "{name} shares {0} {item} equally among {1} friends . How many {item} does each friend get ?",
       "/ N0 N1",
       lambda rng: (lambda n, m: (n * m, n))(int(rng.integers(2, 9)), int(rng.integers(10, 25)))),
    _t("age-distractor", "collections",
       "{name} is {0} years old . {name} keeps {1} {item} and finds {2} more . How many {item} does {name} keep now ?",
       "+ N1 N2", lambda rng: _distinct_ints(rng, 3)),
    # two operators
    _t("change-after-buying", "shopping",
       "{name} had {0} dollars and bought {1} {item} at {2} dollars each . How much money does {name} have left ?",
       "- N0 * N1 N2",
       lambda rng: (int(rng.integers(40, 95)), int(rng.integers(2, 8)), _price(rng))),
    _t("hours-remaining", "travel",
       "A trip is {0} km long and {1} km are already done . The bus travels {2} km every hour . How many hours of driving remain ?",
       "/ - N0 N1 N2",
       lambda rng: (lambda d, s: (d[0] + d[1], d[1], s))(tuple(sorted(_distinct_ints(rng, 2, 20, 200), reverse=True)), int(rng.integers(2, 9)))),
    _t("pens-in-boxes", "containers",
       "{name} packs {0} boxes ; each box holds {1} red pens and {2} blue pens . How many pens are there in total ?",
       "* N0 + N1 N2", lambda rng: _distinct_ints(rng, 3, 2, 20)),
    _t("circle-area", "geometry",
       "A circular garden has a radius of {0} meters . What is the approximate area of the garden ?",
       "* C:3.14 * N0 N0", lambda rng: (int(rng.integers(2, 30)),)),
    _t("discount", "shopping",
       "A jacket costs {0} dollars . In a sale the price drops by {1}% . What is the sale price ?",
       "- N0 * N0 N1",
       lambda rng: (int(rng.integers(30, 200)), int(rng.choice([10, 15, 20, 25, 30, 40, 50])))),
    # three operators
    _t("earning-gap", "shopping",
       "{name} sells {0} cakes at {1} dollars each and {2} pies at {3} dollars each . How much more money do the cakes bring in than the pies ?",
       "- * N0 N1 * N2 N3",
       lambda rng: (lambda a, b, c, d: (a, max(c, d), b, min(c, d)))(*_distinct_ints(rng, 4, 3, 30))),
    _t("split-remainder", "sharing",
       "{name} had {0} dollars , spent it on {1} {item} at {2} dollars each , and split what was left among {3} people . How many dollars does each person get ?",
       "/ - N0 * N1 N2 N3",
       lambda rng: (lambda kn, p: (kn[0] * p + int(rng.integers(20, 60)), kn[0], p, kn[1]))(_distinct_ints(rng, 2, 2, 8), int(rng.integers(8, 15)))),
    _t("bags-minus-chipped", "collections",
       "{name} owns {0} {item} . {name} buys {1} bags ; each bag holds {2} {item} but {3} of those are chipped and thrown away . How many {item} does {name} end up with ?",
       "+ N0 * N1 - N2 N3",
       lambda rng: (lambda a, b, c, d: (a, b, max(c, d), min(c, d)))(*_distinct_ints(rng, 4, 2, 25))),
    # four operators
    _t("bottles-staying", "containers",
       "A factory fills {0} crates with {1} bottles each . It then ships {2} boxes , each packed with {3} large bottles and {4} small bottles . How many bottles stay at the factory ?",
       "- * N0 N1 * N2 + N3 N4",
       lambda rng: (lambda v: (v[0] + 40, v[1] + 15, v[2], v[3], v[4]))(_distinct_ints(rng, 5, 2, 14))),
    _t("egg-cartons", "containers",
       "A farm collects {0} trays of {1} eggs each , and {2} of the eggs break . The rest go into cartons that hold {3} white and {4} brown eggs each . How many cartons are filled ?",
       "/ - * N0 N1 N2 + N3 N4",
       lambda rng: (lambda v: (v[0] + 30, v[1] + 12, v[2], v[3], v[4]))(_distinct_ints(rng, 5, 2, 11))),
)


@dataclass(frozen=True)
class SynthConfig:
    n_problems: int
    seed: int
    max_ops: int = 4
    op_distribution: tuple = (0.45, 0.35, 0.15, 0.05)
    templates: tuple | None = None  # restrict to these template names

    def __post_init__(self):
        if self.n_problems < 0:
            raise ValueError("n_problems must be non-negative")
        if not 1 <= self.max_ops <= 4:
            raise ValueError("max_ops must be in 1..4")
        if len(self.op_distribution) < self.max_ops:
            raise ValueError("op_distribution shorter than max_ops")
        if any(p < 0 for p in self.op_distribution) or sum(self.op_distribution[: self.max_ops]) <= 0:
            raise ValueError("op_distribution must have positive mass")


def generate_synthetic(config: SynthConfig) -> list[ProblemRecord]:
    """Deterministic function of the config: same config, same records."""
    pool = TEMPLATES if config.templates is None else tuple(
        t for t in TEMPLATES if t.name in set(config.templates)
    )
    if config.templates is not None and len(pool) != len(set(config.templates)):
        known = {t.name for t in TEMPLATES}
        missing = sorted(set(config.templates) - known)
        raise ValueError(f"unknown template names: {missing}")
    by_ops: dict[int, list[Template]] = {}
    for t in pool:
        if t.n_ops <= config.max_ops:
            by_ops.setdefault(t.n_ops, []).append(t)
    if not by_ops:
        raise ValueError("no templates available under max_ops")
    op_counts = sorted(by_ops)
    weights = np.array([config.op_distribution[k - 1] for k in op_counts], dtype=float)
    weights /= weights.sum()

    rng = np.random.default_rng(config.seed)
    records = []
    for i in range(config.n_problems):
        k = op_counts[int(rng.choice(len(op_counts), p=weights))]
        group = by_ops[k]
        tmpl = group[int(rng.integers(len(group)))]
        nums = tmpl.sampler(rng)
        name = _NAMES[int(rng.integers(len(_NAMES)))]
        item = _ITEMS[int(rng.integers(len(_ITEMS)))]
        text = tmpl.text.format(*[expr.format_number(float(v)) for v in nums], name=name, item=item)
        words, values = number_map(text)
        if len(set(values)) != len(values):
            raise AssertionError(f"template {tmpl.name}: repeated slot value in {values}")
        gold = expr.from_text(tmpl.equation)
        answer = expr.evaluate(gold, values)
        records.append(ProblemRecord(
            id=f"syn-{config.seed}-{i:06d}",
            words=words,
            slot_values=values,
            gold_prefix=gold,
            gold_answer=answer,
        ))
    return records
