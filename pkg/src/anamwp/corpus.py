"""Problem records, number mapping, vocabulary, and JSONL ingest/emit.

A problem's text is tokenized and every numeric occurrence is replaced,
left to right, with a slot word N0, N1, ...; the numeric values move to
a parallel slot-value list. Equations are stored in prefix form over
those slots plus a small configured set of constants.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field

import numpy as np

from . import expr
from .expr import Constant, NumberSlot, Operator, ParseError, Token

__all__ = [
    "CorpusError",
    "DEFAULT_CONSTANTS",
    "N_SLOTS_MAX",
    "ProblemRecord",
    "Vocabulary",
    "OutputMask",
    "number_map",
    "build_vocab",
    "build_mask",
    "record_to_obj",
    "record_from_obj",
    "ingest",
    "emit",
    "answers_match",
]

logger = logging.getLogger(__name__)

DEFAULT_CONSTANTS = (1.0, 3.14)
N_SLOTS_MAX = 10
ANSWER_RTOL = 1e-4

PAD, UNK, EOS = 0, 1, 2

# numbers (optionally a percent), alphabetic words, single punctuation marks
_TEXT_TOKEN_RE = re.compile(r"(?P<num>\d+\.\d+|\.\d+|\d+)(?P<pct>%)?|(?P<word>[^\W\d_]+)|(?P<punct>[^\w\s])")
_SLOT_WORD_RE = re.compile(r"^N(\d+)$")


class CorpusError(ValueError):
    pass


def number_map(text: str) -> tuple[tuple[str, ...], tuple[float, ...]]:
    """Tokenize text, replacing the i-th numeric occurrence with Ni.

    Returns (words, slot_values). Percent forms like 25% map to 0.25.
    """
    words: list[str] = []
    values: list[float] = []
    for m in _TEXT_TOKEN_RE.finditer(text):
        if m.group("num") is not None:
            v = float(m.group("num"))
            if m.group("pct"):
                v /= 100.0
            words.append(f"N{len(values)}")
            values.append(v)
        elif m.group("word") is not None:
            words.append(m.group("word"))
        else:
            words.append(m.group("punct"))
    return tuple(words), tuple(values)


@dataclass(frozen=True)
class ProblemRecord:
    id: str
    words: tuple[str, ...]
    slot_values: tuple[float, ...]
    gold_prefix: tuple[Token, ...]
    gold_answer: float

    @property
    def n_operators(self) -> int:
        return expr.count_operators(self.gold_prefix)

    def text(self) -> str:
        out = []
        for w in self.words:
            m = _SLOT_WORD_RE.match(w)
            out.append(expr.format_number(self.slot_values[int(m.group(1))]) if m else w)
        return " ".join(out)


def answers_match(predicted: float, gold: float, rtol: float = ANSWER_RTOL) -> bool:
    return abs(predicted - gold) <= rtol * max(1.0, abs(gold))


@dataclass
class Vocabulary:
    """Word ids for the encoder plus the decoder's token universe.

    Word ids: 0=PAD, 1=UNK, 2=EOS, then corpus words by descending
    frequency. Decoder ids: the five operators, then N0..N{n_slots-1},
    then the configured constants.
    """

    words: tuple[str, ...]
    n_slots: int
    constants: tuple[float, ...]
    word_to_id: dict = field(init=False, repr=False)
    decoder_tokens: tuple[Token, ...] = field(init=False, repr=False)
    token_to_id: dict = field(init=False, repr=False)

    def __post_init__(self):
        self.word_to_id = {w: i for i, w in enumerate(self.words)}
        toks: list[Token] = [Operator(s) for s in expr.OPERATOR_SYMBOLS]
        toks += [NumberSlot(i) for i in range(self.n_slots)]
        toks += [Constant(v) for v in self.constants]
        self.decoder_tokens = tuple(toks)
        self.token_to_id = {t: i for i, t in enumerate(self.decoder_tokens)}

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def n_decoder_tokens(self) -> int:
        return len(self.decoder_tokens)

    @property
    def sos_id(self) -> int:
        """Extra decoder-input row; never a legal output."""
        return len(self.decoder_tokens)

    def encode_words(self, words) -> np.ndarray:
        return np.array([self.word_to_id.get(w, UNK) for w in words], dtype=np.intp)

    def encode_tokens(self, tokens) -> np.ndarray:
        try:
            return np.array([self.token_to_id[t] for t in tokens], dtype=np.intp)
        except KeyError as e:
            raise CorpusError(f"equation token outside decoder universe: {e.args[0]!r}") from None

    def to_dict(self) -> dict:
        return {
            "words": list(self.words),
            "n_slots": self.n_slots,
            "constants": list(self.constants),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocabulary":
        return cls(tuple(d["words"]), int(d["n_slots"]), tuple(float(c) for c in d["constants"]))


def build_vocab(records, n_slots_max: int = N_SLOTS_MAX,
                constants=DEFAULT_CONSTANTS) -> Vocabulary:
    """Frequency-ordered vocabulary over the records' words."""
    counts: dict[str, int] = {}
    for r in records:
        for w in r.words:
            counts[w] = counts.get(w, 0) + 1
    ordered = sorted(counts, key=lambda w: (-counts[w], w))
    words = ("<pad>", "<unk>", "<eos>") + tuple(ordered)
    return Vocabulary(words, n_slots_max, tuple(constants))


@dataclass(frozen=True)
class OutputMask:
    """Boolean row over the decoder universe: which tokens this problem
    may emit. Operators and constants are always available; slot Ni only
    when the text has an i-th number."""

    allowed: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "allowed", np.asarray(self.allowed, dtype=bool))


def build_mask(record: ProblemRecord, vocab: Vocabulary) -> OutputMask:
    n = len(record.slot_values)
    if n > vocab.n_slots:
        raise CorpusError(
            f"{record.id}: {n} numbers in text exceeds the {vocab.n_slots}-slot decoder universe"
        )
    allowed = np.zeros(vocab.n_decoder_tokens, dtype=bool)
    for i, t in enumerate(vocab.decoder_tokens):
        if isinstance(t, Operator) or isinstance(t, Constant):
            allowed[i] = True
        else:
            allowed[i] = t.index < n
    return OutputMask(allowed)


def record_to_obj(record: ProblemRecord) -> dict:
    tree = expr.prefix_to_tree(record.gold_prefix)
    return {
        "id": record.id,
        "text": record.text(),
        "equation": expr.render_infix(tree, record.slot_values),
        "answer": record.gold_answer,
    }


def record_from_obj(obj: dict, lineno: int | None = None) -> ProblemRecord:
    where = f"line {lineno}: " if lineno is not None else ""
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}expected a JSON object")
    for key, types in (("id", str), ("text", str), ("equation", str), ("answer", (int, float))):
        if key not in obj:
            raise CorpusError(f"{where}missing field {key!r}")
        if not isinstance(obj[key], types) or isinstance(obj[key], bool):
            raise CorpusError(f"{where}field {key!r} has the wrong type")
    words, values = number_map(obj["text"])
    try:
        tree = expr.parse_infix(obj["equation"], values)
    except ParseError as e:
        raise CorpusError(f"{where}unparseable equation {obj['equation']!r}: {e}") from None
    return ProblemRecord(
        id=obj["id"],
        words=words,
        slot_values=values,
        gold_prefix=expr.tree_to_prefix(tree),
        gold_answer=float(obj["answer"]),
    )


def _validate(record: ProblemRecord, n_slots_max: int, constants) -> str | None:
    """Reason the record is unusable, or None if it is fine."""
    if len(record.slot_values) > n_slots_max:
        return f"more than {n_slots_max} numbers in text"
    for t in record.gold_prefix:
        if isinstance(t, Constant) and not any(
            abs(t.value - c) <= 1e-9 for c in constants
        ):
            return f"equation value {expr.format_number(t.value)} not in text or constant set"
    try:
        value = expr.evaluate(record.gold_prefix, record.slot_values)
    except expr.EvalError as e:
        return f"gold equation does not evaluate: {e}"
    if not answers_match(value, record.gold_answer):
        return f"gold equation gives {value!r}, answer says {record.gold_answer!r}"
    return None


def ingest(path, n_slots_max: int = N_SLOTS_MAX, constants=DEFAULT_CONSTANTS) -> list[ProblemRecord]:
    """Read a JSONL corpus, keeping only records whose gold equation
    reproduces the stated answer (relative tolerance 1e-4).

    Structurally broken lines raise CorpusError with the line number;
    semantically unusable records are dropped and counted.
    """
    records: list[ProblemRecord] = []
    dropped = 0
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"line {lineno}: invalid JSON: {e}") from None
            record = record_from_obj(obj, lineno)
            reason = _validate(record, n_slots_max, constants)
            if reason is None:
                records.append(record)
            else:
                dropped += 1
                logger.debug("dropping %s: %s", record.id, reason)
    if dropped:
        logger.warning("ingest %s: dropped %d of %d records", path, dropped, dropped + len(records))
    return records


def emit(records, path) -> None:
    """Write records as JSONL, one {id, text, equation, answer} per line."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(record_to_obj(r), ensure_ascii=False) + "\n")
