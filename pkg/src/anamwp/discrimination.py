"""Solution discrimination: a bilinear scorer between problem vectors and
GRU-encoded candidate solutions, gradient-guided vulnerable-token search,
and negative candidate construction.

A negative set for a problem mixes three provenances: "gt-variant"
(single-token replacements at the gold equation's most vulnerable
position), "random" (another problem's gold equation whose tokens all
fit this problem), and "random-variant" (replacements inside that
random equation). Candidates that reproduce the gold value are filtered
out, since they are not actually wrong.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, Tensor
from .corpus import OutputMask, ProblemRecord, Vocabulary
from .expr import Constant, EvalError, NumberSlot, Operator, evaluate
from .nn import Embedding, GRUCell, run_gru

__all__ = [
    "SolutionEncoder",
    "BilinearDiscriminator",
    "NegativeItem",
    "NegativeSet",
    "NoReplaceableToken",
    "encode_solutions",
    "discriminate",
    "replaceable_positions",
    "position_gradient_norms",
    "select_vulnerable_token",
    "vulnerable_positions",
    "enumerate_negatives",
    "sample_random_negative",
    "build_negative_set",
    "build_negative_sets",
    "discriminator_loss",
    "guidance_loss",
    "VALUE_COLLISION_RTOL",
]

VALUE_COLLISION_RTOL = 1e-6


class NoReplaceableToken(Exception):
    """No position of the equation admits any replacement candidate."""


class SolutionEncoder:
    """GRU over solution token embeddings; the final state is the
    solution vector."""

    def __init__(self, rng, n_tokens: int, emb_dim: int, hidden_dim: int):
        self.emb = Embedding(rng, n_tokens, emb_dim, "solution.tokens")
        self.cell = GRUCell(rng, emb_dim, hidden_dim, "solution.cell")

    def params(self):
        return self.emb.params() + self.cell.params()

    def encode_ids(self, id_seqs) -> Tensor:
        """Batch-encode ragged id sequences; returns (N, hidden)."""
        if not id_seqs:
            raise ValueError("encode_ids: empty batch")
        lengths = np.array([len(s) for s in id_seqs])
        if lengths.min() == 0:
            raise ValueError("encode_ids: empty token sequence")
        t_max = int(lengths.max())
        ids = np.zeros((len(id_seqs), t_max), dtype=np.intp)
        for i, s in enumerate(id_seqs):
            ids[i, : len(s)] = s
        mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)
        steps = [self.emb(ids[:, t]) for t in range(t_max)]
        _, final = run_gru(self.cell, steps, mask)
        return final

    def encode_embedded(self, vectors: Tensor) -> Tensor:
        """Encode one solution given as a (T, emb_dim) tensor of embedding
        vectors; returns (1, hidden). Same arithmetic as encode_ids with
        the lookup replaced by caller-supplied rows."""
        t_max = vectors.data.shape[0]
        steps = [ad.take_rows(vectors, [t]) for t in range(t_max)]
        _, final = run_gru(self.cell, steps)
        return final


class BilinearDiscriminator:
    """score(a, b) = a^T W b, no bias. W starts at zero so a fresh
    discriminator maps every pair to probability exactly 0.5."""

    def __init__(self, hidden_dim: int):
        self.w = Parameter(np.zeros((hidden_dim, hidden_dim)), "discriminator.w")

    def params(self):
        return [self.w]

    def score_rows(self, a: Tensor, b: Tensor) -> Tensor:
        """Row-wise bilinear scores for (N, H) against (N, H) -> (N,)."""
        return ad.tensor_sum(ad.mul(ad.matmul(a, self.w), b), axis=1)


def encode_solutions(token_seqs, vocab: Vocabulary, encoder: SolutionEncoder) -> Tensor:
    """Encode prefix token tuples into solution vectors (N, hidden)."""
    return encoder.encode_ids([vocab.encode_tokens(seq) for seq in token_seqs])


def discriminate(problem_vec: np.ndarray, solution_vec: np.ndarray,
                 disc: BilinearDiscriminator) -> tuple[float, float]:
    """Raw bilinear score and its sigmoid for one problem/solution pair."""
    raw = float(problem_vec @ disc.w.data @ solution_vec)
    return raw, float(ad._sigmoid(np.array([raw]))[0])


def replaceable_positions(tokens, mask: OutputMask, vocab: Vocabulary) -> list[int]:
    """Positions where at least one same-type alternative exists.

    Operator positions always qualify (four alternatives); a number or
    constant position qualifies when the problem's mask allows some
    other non-operator token."""
    n_value_tokens = int(np.sum([
        mask.allowed[i] and not isinstance(t, Operator)
        for i, t in enumerate(vocab.decoder_tokens)
    ]))
    out = []
    for i, t in enumerate(tokens):
        if isinstance(t, Operator) or n_value_tokens >= 2:
            out.append(i)
    return out


def _grad_norms(problem_vecs: np.ndarray, id_seqs, encoder: SolutionEncoder,
                disc: BilinearDiscriminator) -> np.ndarray:
    """Per-position gradient magnitudes of the raw bilinear scores with
    respect to each solution token's embedding vector; (N, T_max)."""
    lengths = np.array([len(s) for s in id_seqs])
    t_max = int(lengths.max())
    n = len(id_seqs)
    ids = np.zeros((n, t_max), dtype=np.intp)
    for i, s in enumerate(id_seqs):
        ids[i, : len(s)] = s
    seqmask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)
    pv = Tensor(problem_vecs)
    with Tape() as tape:
        steps = [encoder.emb(ids[:, t]) for t in range(t_max)]
        _, final = run_gru(encoder.cell, steps, seqmask)
        # rows are independent, so the gradient of the summed scores w.r.t.
        # one row's embeddings is that row's own score gradient
        total = ad.tensor_sum(disc.score_rows(pv, final))
    for p in encoder.params() + disc.params():
        p.grad = None
    tape.backward(total)
    norms = np.zeros((n, t_max))
    for t, step in enumerate(steps):
        g = step.grad
        if g is not None:
            norms[:, t] = np.linalg.norm(g, axis=1)
    for p in encoder.params() + disc.params():
        p.grad = None
    return norms


def position_gradient_norms(problem_vec: np.ndarray, tokens, vocab: Vocabulary,
                            encoder: SolutionEncoder,
                            disc: BilinearDiscriminator) -> np.ndarray:
    """Gradient magnitude of the raw score per solution position; (T,)."""
    ids = vocab.encode_tokens(tuple(tokens))
    return _grad_norms(problem_vec.reshape(1, -1), [ids], encoder, disc)[0, : len(ids)]


def vulnerable_positions(problem_vecs: np.ndarray, token_seqs, masks,
                         vocab: Vocabulary, encoder: SolutionEncoder,
                         disc: BilinearDiscriminator,
                         grad_guided: bool = True,
                         rng: np.random.Generator | None = None) -> list:
    """Most attackable position per equation, or None where nothing is
    replaceable. Gradient-guided by default; with grad_guided=False a
    uniform draw over the replaceable positions (rng required)."""
    repl = [replaceable_positions(seq, m, vocab) for seq, m in zip(token_seqs, masks)]
    if grad_guided:
        id_seqs = [vocab.encode_tokens(seq) for seq in token_seqs]
        norms = _grad_norms(problem_vecs, id_seqs, encoder, disc)
        out = []
        for i, positions in enumerate(repl):
            if not positions:
                out.append(None)
                continue
            row = norms[i, positions]
            out.append(positions[int(np.argmax(row))])  # argmax takes the first tie
        return out
    if rng is None:
        raise ValueError("grad_guided=False requires an rng")
    return [positions[int(rng.integers(len(positions)))] if positions else None
            for positions in repl]


def select_vulnerable_token(problem_vec: np.ndarray, tokens, mask: OutputMask,
                            vocab: Vocabulary, encoder: SolutionEncoder,
                            disc: BilinearDiscriminator,
                            grad_guided: bool = True,
                            rng: np.random.Generator | None = None) -> int:
    """Single-equation form of vulnerable_positions; raises when no
    position is replaceable."""
    pos = vulnerable_positions(problem_vec.reshape(1, -1), [tuple(tokens)], [mask],
                               vocab, encoder, disc, grad_guided, rng)[0]
    if pos is None:
        raise NoReplaceableToken("no replaceable position in equation")
    return pos


def enumerate_negatives(tokens, position: int, mask: OutputMask,
                        vocab: Vocabulary) -> list[tuple]:
    """All single-token same-type replacements at a position.

    An operator is swapped for each of the other four operators; a
    number or constant for every other mask-allowed non-operator token.
    """
    tokens = tuple(tokens)
    original = tokens[position]
    out = []
    for i, cand in enumerate(vocab.decoder_tokens):
        if cand == original:
            continue
        if isinstance(original, Operator) != isinstance(cand, Operator):
            continue
        if not isinstance(cand, Operator) and not mask.allowed[i]:
            continue
        out.append(tokens[:position] + (cand,) + tokens[position + 1 :])
    return out


def sample_random_negative(record: ProblemRecord, records, mask: OutputMask,
                           vocab: Vocabulary, rng: np.random.Generator,
                           max_tries: int = 20):
    """Another problem's gold equation, usable as a wrong answer here:
    every token must be emittable under this problem's mask and the
    sequence must differ from the gold. Returns (tokens, source_id) or
    (None, None) after max_tries draws."""
    if len(records) <= 1:
        return None, None
    for _ in range(max_tries):
        cand = records[int(rng.integers(len(records)))]
        if cand.id == record.id:
            continue
        seq = cand.gold_prefix
        if seq == record.gold_prefix:
            continue
        if all(mask.allowed[vocab.token_to_id[t]] for t in seq):
            return seq, cand.id
    return None, None


@dataclass(frozen=True)
class NegativeItem:
    tokens: tuple
    provenance: str  # "gt-variant" | "random" | "random-variant"


@dataclass
class NegativeSet:
    record_id: str
    items: list[NegativeItem]
    gt_position: int | None
    gt_variant_count: int        # enumerated at gt_position, before filtering
    random_source: str | None
    random_position: int | None
    random_variant_count: int

    def sequences(self) -> list[tuple]:
        return [it.tokens for it in self.items]


def _value_collides(tokens, record: ProblemRecord) -> bool:
    try:
        v = evaluate(tokens, record.slot_values)
    except EvalError:
        return False  # does not even evaluate, certainly not the gold value
    return abs(v - record.gold_answer) <= VALUE_COLLISION_RTOL * max(1.0, abs(record.gold_answer))


def _assemble(record, mask, vocab, gt_pos, rand, rand_src, rand_pos) -> NegativeSet:
    raw: list[NegativeItem] = []
    gt_count = 0
    if gt_pos is not None:
        variants = enumerate_negatives(record.gold_prefix, gt_pos, mask, vocab)
        gt_count = len(variants)
        raw.extend(NegativeItem(v, "gt-variant") for v in variants)
    rand_count = 0
    if rand is not None:
        raw.append(NegativeItem(rand, "random"))
        if rand_pos is not None:
            variants = enumerate_negatives(rand, rand_pos, mask, vocab)
            rand_count = len(variants)
            raw.extend(NegativeItem(v, "random-variant") for v in variants)
    seen = set()
    items = []
    for it in raw:
        if it.tokens in seen or it.tokens == record.gold_prefix:
            continue
        seen.add(it.tokens)
        if _value_collides(it.tokens, record):
            continue
        items.append(it)
    return NegativeSet(record.id, items, gt_pos, gt_count, rand_src, rand_pos, rand_count)


def build_negative_set(record: ProblemRecord, problem_vec: np.ndarray, records,
                       mask: OutputMask, vocab: Vocabulary,
                       encoder: SolutionEncoder, disc: BilinearDiscriminator,
                       rng: np.random.Generator, grad_guided: bool = True,
                       extra_negatives: bool = True,
                       max_tries: int = 20) -> NegativeSet:
    """Construct the negative candidate set for one problem.

    Raises NoReplaceableToken only when the gold equation has no
    replaceable position and no random negative can be found either; a
    set that merely filters down to empty is returned empty.
    """
    sets = build_negative_sets([record], problem_vec.reshape(1, -1), records,
                               [mask], vocab, encoder, disc, rng,
                               grad_guided, extra_negatives, max_tries)
    return sets[0]


def build_negative_sets(batch, problem_vecs: np.ndarray, records, masks,
                        vocab: Vocabulary, encoder: SolutionEncoder,
                        disc: BilinearDiscriminator, rng: np.random.Generator,
                        grad_guided: bool = True, extra_negatives: bool = True,
                        max_tries: int = 20,
                        skip_unusable: bool = False) -> list[NegativeSet]:
    """Batch version of build_negative_set (one gradient pass for the gold
    equations, one for the random negatives).

    skip_unusable=True returns an empty set for a problem where neither
    branch yields anything, instead of raising; the training loop uses
    this so one degenerate problem cannot abort an epoch.
    """
    golds = [r.gold_prefix for r in batch]
    gt_pos = vulnerable_positions(problem_vecs, golds, masks, vocab, encoder,
                                  disc, grad_guided, rng)
    rands: list = [None] * len(batch)
    rand_srcs: list = [None] * len(batch)
    if extra_negatives:
        for i, r in enumerate(batch):
            rands[i], rand_srcs[i] = sample_random_negative(r, records, masks[i],
                                                            vocab, rng, max_tries)
    rand_pos: list = [None] * len(batch)
    with_rand = [i for i, seq in enumerate(rands) if seq is not None]
    if with_rand:
        sub_pos = vulnerable_positions(problem_vecs[with_rand],
                                       [rands[i] for i in with_rand],
                                       [masks[i] for i in with_rand],
                                       vocab, encoder, disc, grad_guided, rng)
        for i, p in zip(with_rand, sub_pos):
            rand_pos[i] = p
    out = []
    for i, r in enumerate(batch):
        if gt_pos[i] is None and rands[i] is None:
            if not skip_unusable:
                raise NoReplaceableToken(
                    f"{r.id}: gold equation has no replaceable token and no random negative exists"
                )
            out.append(NegativeSet(r.id, [], None, 0, None, None, 0))
            continue
        out.append(_assemble(r, masks[i], vocab, gt_pos[i], rands[i], rand_srcs[i], rand_pos[i]))
    return out


def discriminator_loss(problem_vecs: Tensor, gold_vecs: Tensor, neg_vecs,
                       neg_owner, disc: BilinearDiscriminator) -> Tensor:
    """Mean over problems of -log sig(s_gold) - mean_negs log(1 - sig(s_neg)).

    neg_vecs is (M, H) for all negatives in the batch; neg_owner maps each
    row to its problem index. Problems without negatives contribute only
    the positive term.
    """
    b = problem_vecs.data.shape[0]
    s_gold = disc.score_rows(problem_vecs, gold_vecs)
    loss = ad.mean(ad.neg(ad.log_sigmoid(s_gold)))
    owner = np.asarray(neg_owner, dtype=np.intp)
    if owner.size:
        pv_rep = ad.take_rows(problem_vecs, owner)
        s_neg = disc.score_rows(pv_rep, neg_vecs)
        counts = np.bincount(owner, minlength=b)
        weights = 1.0 / (b * counts[owner])
        neg_term = ad.tensor_sum(ad.mul(ad.neg(ad.log_sigmoid(ad.neg(s_neg))), Tensor(weights)))
        loss = ad.add(loss, neg_term)
    return loss


def guidance_loss(problem_vecs: Tensor, gold_solution_vecs: np.ndarray,
                  w: np.ndarray) -> Tensor:
    """Solver-side term: -log sig(problem . W . gold_solution), averaged
    over the batch. The discriminator weights and solution vectors enter
    as constants, so the gradient reaches only the problem encoder."""
    scores = ad.tensor_sum(
        ad.mul(ad.matmul(problem_vecs, Tensor(w)), Tensor(gold_solution_vecs)), axis=1
    )
    return ad.mean(ad.neg(ad.log_sigmoid(scores)))
