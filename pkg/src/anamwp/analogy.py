"""Structural analogy between problems: bucketing by operator signature,
positive/negative pair mining, and the per-level scoring heads.

Two problems are analogous at level k when the first k operators of
their gold equations' pre-order walks agree. A pair is scored by a
small MLP over the concatenated problem vectors; training pushes
same-bucket pairs toward 1 and cross-bucket pairs toward 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import expr
from .autodiff import Tensor
from .nn import Linear

__all__ = [
    "SignatureIndex",
    "PairBatch",
    "AnalogyHead",
    "build_index",
    "sample_pairs",
    "analogy_score",
    "analogy_loss",
]


class SignatureIndex:
    """Per-level buckets of problem ids sharing an operator signature."""

    def __init__(self, levels, strict_left_child: bool = False):
        self.strict_left_child = strict_left_child
        self.buckets: dict[int, dict[tuple, tuple[str, ...]]] = {}
        self.sig_of: dict[int, dict[str, tuple]] = {}
        self.ids_at: dict[int, tuple[str, ...]] = {}
        self._complements: dict[tuple, tuple[str, ...]] = {}
        for k in levels:
            self.buckets[k] = {}
            self.sig_of[k] = {}
            self.ids_at[k] = ()

    @property
    def levels(self) -> tuple[int, ...]:
        return tuple(sorted(self.buckets))

    def bucket(self, level: int, sig) -> tuple[str, ...]:
        return self.buckets[level].get(sig, ())

    def complement(self, level: int, sig) -> tuple[str, ...]:
        """All ids indexed at this level whose signature differs."""
        key = (level, sig)
        if key not in self._complements:
            self._complements[key] = tuple(
                i for i in self.ids_at[level] if self.sig_of[level][i] != sig
            )
        return self._complements[key]


def build_index(records, levels=(1, 2), strict_left_child: bool = False) -> SignatureIndex:
    """Bucket records by their level-k signatures for each requested k.

    A record too short to have k operators is simply absent from level k.
    """
    levels = tuple(sorted(set(levels)))
    for k in levels:
        if k not in (1, 2, 3):
            raise ValueError(f"analogy level must be 1, 2 or 3, got {k}")
    index = SignatureIndex(levels, strict_left_child)
    for k in levels:
        ids = []
        for r in records:
            sig = expr.signature(r.gold_prefix, k, strict_left_child)
            if sig is None:
                continue
            index.sig_of[k][r.id] = sig
            bucket = index.buckets[k].setdefault(sig, [])
            bucket.append(r.id)
            ids.append(r.id)
        index.ids_at[k] = tuple(ids)
        index.buckets[k] = {s: tuple(b) for s, b in index.buckets[k].items()}
    return index


@dataclass
class PairBatch:
    """Canonical (lower id first) pairs with labels, grouped by level."""

    pairs: dict[int, list[tuple[str, str, int]]] = field(default_factory=dict)

    def n_pairs(self) -> int:
        return sum(len(v) for v in self.pairs.values())

    def partner_ids(self) -> set[str]:
        out = set()
        for entries in self.pairs.values():
            for a, b, _ in entries:
                out.add(a)
                out.add(b)
        return out


_MAX_DRAWS = 50


def sample_pairs(index: SignatureIndex, batch_ids, rng: np.random.Generator,
                 per_problem: int = 1) -> PairBatch:
    """For each batch problem and level: one same-bucket positive (when the
    bucket has a partner) and one different-bucket negative (when one
    exists). Duplicate canonical pairs within the batch are kept once."""
    batch = PairBatch()
    for k in index.levels:
        entries: list[tuple[str, str, int]] = []
        seen: set[tuple[str, str, int]] = set()

        def put(a: str, b: str, label: int):
            key = (a, b) if a <= b else (b, a)
            item = (key[0], key[1], label)
            if item not in seen:
                seen.add(item)
                entries.append(item)

        for pid in batch_ids:
            sig = index.sig_of[k].get(pid)
            if sig is None:
                continue
            bucket = index.bucket(k, sig)
            for _ in range(per_problem):
                if len(bucket) >= 2:
                    at = bucket.index(pid)
                    j = int(rng.integers(len(bucket) - 1))
                    put(pid, bucket[j if j < at else j + 1], 1)
                partner = _draw_different(index, k, sig, rng)
                if partner is not None:
                    put(pid, partner, 0)
        if entries:
            batch.pairs[k] = entries
    return batch


def _draw_different(index: SignatureIndex, level: int, sig, rng) -> str | None:
    ids = index.ids_at[level]
    if not ids:
        return None
    for _ in range(_MAX_DRAWS):
        cand = ids[int(rng.integers(len(ids)))]
        if index.sig_of[level][cand] != sig:
            return cand
    comp = index.complement(level, sig)
    if not comp:
        return None
    return comp[int(rng.integers(len(comp)))]


class AnalogyHead:
    """MLP scoring head for one level: concat(v1, v2) -> hidden tanh -> logit.

    The output layer starts at zero so an untrained head scores every
    pair exactly 0.5."""

    def __init__(self, rng, hidden_dim: int, level: int):
        self.level = level
        self.lin1 = Linear(rng, 2 * hidden_dim, hidden_dim, f"analogy.k{level}.lin1")
        self.lin2 = Linear(rng, hidden_dim, 1, f"analogy.k{level}.lin2", zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.lin2(ad.tanh(self.lin1(x)))

    def params(self):
        return self.lin1.params() + self.lin2.params()


def analogy_score(vec1: Tensor, vec2: Tensor, head: AnalogyHead) -> float:
    """Probability in (0, 1) that two problem vectors are analogous."""
    v1 = ad.reshape(vec1, (1, -1))
    v2 = ad.reshape(vec2, (1, -1))
    z = head(ad.concat([v1, v2], axis=1))
    return float(ad.sigmoid(z).data[0, 0])


def analogy_loss(batch: PairBatch, encodings: Tensor, row_of: dict, heads: dict) -> Tensor:
    """Sum over levels of mean positive and mean negative log losses.

    Positive pairs contribute -log sigma(z), negatives -log(1 - sigma(z));
    each side is averaged separately, so one positive and one negative
    both at probability 0.5 give exactly 2*ln 2.
    """
    total = None
    for k in sorted(batch.pairs):
        entries = batch.pairs[k]
        head = heads[k]
        i1 = [row_of[a] for a, _, _ in entries]
        i2 = [row_of[b] for _, b, _ in entries]
        v = ad.concat([ad.take_rows(encodings, i1), ad.take_rows(encodings, i2)], axis=1)
        z = head(v)  # (P, 1)
        pos_rows = [i for i, (_, _, lab) in enumerate(entries) if lab == 1]
        neg_rows = [i for i, (_, _, lab) in enumerate(entries) if lab == 0]
        for rows, sign in ((pos_rows, 1.0), (neg_rows, -1.0)):
            if not rows:
                continue
            zr = ad.take_rows(z, rows)
            term = ad.neg(ad.mean(ad.log_sigmoid(ad.mul(zr, sign))))
            total = term if total is None else ad.add(total, term)
    return total if total is not None else Tensor(0.0)
