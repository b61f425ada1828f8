"""Sequence-to-sequence solver: BiGRU problem encoder, attention GRU
decoder over prefix tokens, arity-aware beam search, value accuracy.

Decoding needs no end token: a prefix equation is complete exactly when
the count of still-open operands reaches zero, so the beam tracks that
counter and closes hypotheses when it hits it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .corpus import OutputMask, ProblemRecord, Vocabulary, answers_match, build_mask
from .expr import EvalError, evaluate
from .nn import Embedding, GRUCell, Linear, run_gru

__all__ = [
    "ProblemEncoder",
    "PrefixDecoder",
    "EncodedProblems",
    "encode_problems",
    "teacher_forcing_loss",
    "seq2seq_loss",
    "Beam",
    "beam_search",
    "value_accuracy",
    "bucket_accuracy",
    "default_max_len",
]


class ProblemEncoder:
    """Bidirectional GRU over problem words. The problem vector is the
    concatenation of the two final states; per-token states concatenate
    the directions position-wise."""

    def __init__(self, rng, n_words: int, emb_dim: int, hidden_dim: int):
        if hidden_dim % 2:
            raise ValueError("hidden_dim must be even for a BiGRU encoder")
        self.hidden_dim = hidden_dim
        self.emb = Embedding(rng, n_words, emb_dim, "encoder.words")
        self.fwd = GRUCell(rng, emb_dim, hidden_dim // 2, "encoder.fwd")
        self.bwd = GRUCell(rng, emb_dim, hidden_dim // 2, "encoder.bwd")

    def params(self):
        return self.emb.params() + self.fwd.params() + self.bwd.params()


class PrefixDecoder:
    """GRU decoder with additive attention over encoder states.

    The token embedding table has one extra row, the start-of-sequence
    input; the output projection starts at zero so an untrained decoder
    is exactly uniform over each problem's allowed tokens."""

    def __init__(self, rng, n_tokens: int, emb_dim: int, hidden_dim: int):
        self.n_tokens = n_tokens
        self.emb = Embedding(rng, n_tokens + 1, emb_dim, "decoder.tokens")
        self.cell = GRUCell(rng, emb_dim, hidden_dim, "decoder.cell")
        self.attn_enc = Linear(rng, hidden_dim, hidden_dim, "decoder.attn_enc", bias=False)
        self.attn_dec = Linear(rng, hidden_dim, hidden_dim, "decoder.attn_dec", bias=False)
        self.attn_v = Linear(rng, hidden_dim, 1, "decoder.attn_v", bias=False)
        self.out = Linear(rng, 2 * hidden_dim, n_tokens, "decoder.out", zero_init=True)

    def params(self):
        return (self.emb.params() + self.cell.params() + self.attn_enc.params()
                + self.attn_dec.params() + self.attn_v.params() + self.out.params())

    def step(self, input_ids, h: Tensor, states: Tensor, enc_proj: Tensor,
             position_mask: np.ndarray) -> tuple[Tensor, Tensor]:
        """One decode step for a batch: returns (new hidden, logits)."""
        b, t = position_mask.shape
        x = self.emb(input_ids)
        h2 = self.cell(x, h)
        q = ad.reshape(self.attn_dec(h2), (b, 1, -1))
        e = ad.reshape(self.attn_v(ad.tanh(ad.add(enc_proj, q))), (b, t))
        alpha = ad.masked_softmax(e, position_mask)
        ctx = ad.tensor_sum(ad.mul(ad.reshape(alpha, (b, t, 1)), states), axis=1)
        logits = self.out(ad.concat([h2, ctx], axis=1))
        return h2, logits


@dataclass
class EncodedProblems:
    """Encoder outputs for a list of problems, padded to a shared length."""

    problem_vecs: Tensor            # (N, H)
    step_states: list               # T tensors of (N, H/2*2)
    position_mask: np.ndarray       # (N, T) bool, True at real tokens
    row_of: dict                    # problem id -> row


def encode_problems(records, encoder: ProblemEncoder, vocab: Vocabulary,
                    training: bool = False, p_drop: float = 0.0,
                    rng: np.random.Generator | None = None) -> EncodedProblems:
    """Encode problems into vectors and per-token states.

    Dropout (training only) applies to the problem vectors here; the
    decoder-side dropout of the attended states happens after stacking
    in teacher_forcing_loss, so evaluation paths never draw from rng.
    """
    records = list(records)
    if not records:
        raise ValueError("encode_problems: empty batch")
    lengths = np.array([len(r.words) for r in records])
    if lengths.min() == 0:
        raise ValueError("encode_problems: problem with no words")
    t_max = int(lengths.max())
    ids = np.zeros((len(records), t_max), dtype=np.intp)
    for i, r in enumerate(records):
        ids[i, : len(r.words)] = vocab.encode_words(r.words)
    seq_mask = (np.arange(t_max)[None, :] < lengths[:, None]).astype(np.float64)

    xs = [encoder.emb(ids[:, t]) for t in range(t_max)]
    f_states, f_final = run_gru(encoder.fwd, xs, seq_mask)
    b_states_rev, b_final = run_gru(encoder.bwd, list(reversed(xs)), seq_mask[:, ::-1])
    b_states = list(reversed(b_states_rev))
    steps = [ad.concat([f, b], axis=1) for f, b in zip(f_states, b_states)]
    pv = ad.concat([f_final, b_final], axis=1)
    if training and p_drop > 0.0:
        pv = ad.dropout(pv, p_drop, rng, training=True)
    return EncodedProblems(
        problem_vecs=pv,
        step_states=steps,
        position_mask=seq_mask.astype(bool),
        row_of={r.id: i for i, r in enumerate(records)},
    )


def _stack_states(encoded: EncodedProblems, rows) -> tuple[Tensor, np.ndarray]:
    """(B, T, H) states and (B, T) position mask for the selected rows."""
    per_step = [ad.take_rows(s, rows) for s in encoded.step_states]
    return ad.stack(per_step, axis=1), encoded.position_mask[rows]


def teacher_forcing_loss(records, encoded: EncodedProblems, decoder: PrefixDecoder,
                         vocab: Vocabulary, masks, training: bool = False,
                         p_drop: float = 0.0,
                         rng: np.random.Generator | None = None) -> tuple[Tensor, np.ndarray]:
    """Mean over problems of per-token NLL under teacher forcing.

    Returns (scalar loss, per-record NLL array). masks aligns with
    records; each row's softmax runs over that problem's allowed tokens.
    """
    records = list(records)
    rows = np.array([encoded.row_of[r.id] for r in records], dtype=np.intp)
    states, pos_mask = _stack_states(encoded, rows)
    if training and p_drop > 0.0:
        states = ad.dropout(states, p_drop, rng, training=True)
    enc_proj = ad.matmul(states, decoder.attn_enc.w)

    b = len(records)
    gold_ids = [vocab.encode_tokens(r.gold_prefix) for r in records]
    lengths = np.array([len(g) for g in gold_ids])
    l_max = int(lengths.max())
    targets = np.zeros((b, l_max), dtype=np.intp)
    inputs = np.full((b, l_max), vocab.sos_id, dtype=np.intp)
    for i, g in enumerate(gold_ids):
        targets[i, : len(g)] = g
        inputs[i, 1 : len(g)] = g[:-1]
    step_live = (np.arange(l_max)[None, :] < lengths[:, None]).astype(np.float64)
    allowed = np.stack([m.allowed for m in masks])

    h = ad.take_rows(encoded.problem_vecs, rows)
    total = None
    for t in range(l_max):
        h, logits = decoder.step(inputs[:, t], h, states, enc_proj, pos_mask)
        live = step_live[:, t]
        # padded rows would feed masked targets to the loss; steer them to
        # a token their mask allows (weight is zero anyway)
        step_targets = np.where(live > 0, targets[:, t], _any_allowed(allowed))
        nll = ad.masked_xent(logits, allowed, step_targets)
        weighted = ad.mul(nll, Tensor(live))
        total = weighted if total is None else ad.add(total, weighted)
    per_record = ad.mul(total, Tensor(1.0 / lengths))
    loss = ad.mean(per_record)
    return loss, per_record.data.copy()


def _any_allowed(allowed: np.ndarray) -> np.ndarray:
    return np.argmax(allowed, axis=1)


def seq2seq_loss(record: ProblemRecord, bundle, mask: OutputMask | None = None) -> float:
    """Evaluation-mode per-token NLL of the gold equation for one problem."""
    if mask is None:
        mask = build_mask(record, bundle.vocab)
    encoded = encode_problems([record], bundle.encoder, bundle.vocab)
    loss, _ = teacher_forcing_loss([record], encoded, bundle.decoder, bundle.vocab, [mask])
    return float(loss.data)


def default_max_len(vocab: Vocabulary) -> int:
    return 2 * vocab.n_slots + 1


@dataclass
class Beam:
    """A decode hypothesis: emitted token ids, accumulated log-probability,
    open-operand count, and the decoder state that produced it."""

    token_ids: tuple
    log_prob: float
    open_operands: int
    hidden: np.ndarray


def beam_search(record: ProblemRecord, bundle, mask: OutputMask | None = None,
                width: int = 5, max_len: int | None = None) -> list[tuple]:
    """Ranked complete prefix equations (best first), at most width wide.

    Completed hypotheses leave the beam without consuming width. Ties in
    log-probability break toward the lexicographically smaller id
    sequence, which makes width=1 exactly greedy decoding.
    """
    vocab = bundle.vocab
    if mask is None:
        mask = build_mask(record, vocab)
    encoded = encode_problems([record], bundle.encoder, vocab)
    states, pos_mask = _stack_states(encoded, [0])
    enc_proj = ad.matmul(states, bundle.decoder.attn_enc.w)
    return _beam_decode(bundle, mask, encoded.problem_vecs.data[0], states.data,
                        enc_proj.data, pos_mask, width, max_len)


def _beam_decode(bundle, mask: OutputMask, pv_row: np.ndarray,
                 states_row: np.ndarray, proj_row: np.ndarray,
                 posmask_row: np.ndarray, width: int,
                 max_len: int | None) -> list[tuple]:
    """Beam decode one problem from precomputed encoder outputs
    (states_row, proj_row are (1, T, H); posmask_row is (1, T))."""
    if width < 1:
        raise ValueError("beam width must be at least 1")
    vocab = bundle.vocab
    if max_len is None:
        max_len = default_max_len(vocab)
    states_w = np.repeat(states_row, width, axis=0)
    proj_w = np.repeat(proj_row, width, axis=0)
    mask_w = np.repeat(posmask_row, width, axis=0)
    allowed_ids = np.flatnonzero(mask.allowed)
    is_op = allowed_ids < 5  # operator ids come first in the universe

    live = [Beam((), 0.0, 1, pv_row)]
    done: list[Beam] = []
    for _ in range(max_len):
        if not live:
            break
        k = len(live)
        inputs = np.array([b.token_ids[-1] if b.token_ids else vocab.sos_id for b in live])
        h = Tensor(np.stack([b.hidden for b in live]))
        h2, logits = bundle.decoder.step(inputs, h, Tensor(states_w[:k]),
                                         Tensor(proj_w[:k]), mask_w[:k])
        logp = _masked_log_softmax(logits.data, mask.allowed)
        candidates: list[Beam] = []
        for i, b in enumerate(live):
            used = len(b.token_ids) + 1
            for tid, op in zip(allowed_ids, is_op):
                c = b.open_operands + 1 if op else b.open_operands - 1
                if c > max_len - used:
                    continue  # cannot close the expression in budget
                nb = Beam(b.token_ids + (int(tid),), b.log_prob + logp[i, tid], c,
                          h2.data[i])
                if c == 0:
                    done.append(nb)
                else:
                    candidates.append(nb)
        candidates.sort(key=lambda b: (-b.log_prob, b.token_ids))
        live = candidates[:width]
        if len(done) >= width:
            done.sort(key=lambda b: (-b.log_prob, b.token_ids))
            done = done[:width]
            # extensions only lower log-probability, so nothing live can
            # still displace the kept hypotheses
            if live and live[0].log_prob <= done[-1].log_prob:
                break
    done.sort(key=lambda b: (-b.log_prob, b.token_ids))
    return [tuple(vocab.decoder_tokens[i] for i in b.token_ids) for b in done[:width]]


def _masked_log_softmax(logits: np.ndarray, allowed: np.ndarray) -> np.ndarray:
    z = np.where(allowed[None, :], logits, -np.inf)
    zmax = z.max(axis=1, keepdims=True)
    e = np.exp(z - zmax)
    return z - zmax - np.log(e.sum(axis=1, keepdims=True))


def predict_value(record: ProblemRecord, bundle, mask: OutputMask | None = None,
                  width: int = 5, max_len: int | None = None) -> float | None:
    """Value of the best decodable hypothesis, or None."""
    for tokens in beam_search(record, bundle, mask, width, max_len):
        try:
            return evaluate(tokens, record.slot_values)
        except EvalError:
            continue  # fall through to the next-best hypothesis
    return None


_EVAL_CHUNK = 64


def predict_values(records, bundle, masks=None, width: int = 5,
                   max_len: int | None = None) -> list:
    """predict_value over many records, batching the encoder passes."""
    records = list(records)
    if masks is None:
        masks = [build_mask(r, bundle.vocab) for r in records]
    out = []
    for lo in range(0, len(records), _EVAL_CHUNK):
        chunk = records[lo : lo + _EVAL_CHUNK]
        encoded = encode_problems(chunk, bundle.encoder, bundle.vocab)
        states, pos_mask = _stack_states(encoded, np.arange(len(chunk)))
        proj = ad.matmul(states, bundle.decoder.attn_enc.w)
        for i, r in enumerate(chunk):
            beams = _beam_decode(bundle, masks[lo + i], encoded.problem_vecs.data[i],
                                 states.data[i : i + 1], proj.data[i : i + 1],
                                 pos_mask[i : i + 1], width, max_len)
            value = None
            for tokens in beams:
                try:
                    value = evaluate(tokens, r.slot_values)
                    break
                except EvalError:
                    continue
            out.append(value)
    return out


def value_accuracy(records, bundle, masks=None, width: int = 5,
                   max_len: int | None = None) -> float:
    """Fraction of problems whose best prediction matches the gold answer
    within relative tolerance 1e-4."""
    records = list(records)
    if not records:
        raise ValueError("value_accuracy: no records")
    values = predict_values(records, bundle, masks, width, max_len)
    hits = sum(1 for r, v in zip(records, values)
               if v is not None and answers_match(v, r.gold_answer))
    return hits / len(records)


def bucket_accuracy(records, bundle, masks=None, width: int = 5,
                    max_len: int | None = None) -> dict[int, dict]:
    """Accuracy stratified by gold operator count.

    Returns {n_ops: {count, percentage, accuracy}} over the records."""
    records = list(records)
    values = predict_values(records, bundle, masks, width, max_len)
    hits: dict[int, int] = {}
    totals: dict[int, int] = {}
    for r, v in zip(records, values):
        n = r.n_operators
        totals[n] = totals.get(n, 0) + 1
        if v is not None and answers_match(v, r.gold_answer):
            hits[n] = hits.get(n, 0) + 1
    out = {}
    for n in sorted(totals):
        out[n] = {
            "count": totals[n],
            "percentage": totals[n] / len(records),
            "accuracy": hits.get(n, 0) / totals[n],
        }
    return out
