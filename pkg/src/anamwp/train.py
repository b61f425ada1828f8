"""Joint training loop: seq2seq solver plus analogy and discrimination.

Each step runs four phases in order: (1) sample analogy pairs for the
batch, (2) encode problems in evaluation mode and build negative sets
via gradient-guided token replacement, (3) update the discriminator
with binary cross-entropy, (4) update encoder + decoder + analogy heads
with L = L_seq + lambda1 * L_a + lambda2 * L_s, where the guidance term
treats the freshly updated discriminator and the gold solution vectors
as constants.

Randomness is organized as named substreams of the run seed (model
init, shuffling, pair sampling, negative sampling, dropout), drawn in
that fixed order. Because each consumer has its own stream, disabling
one mechanism cannot shift the draws of another, which is what makes
the lambda1=lambda2=0 run reproduce the baseline trajectory bit for
bit while its discriminator still trains.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from . import analogy as amod
from . import autodiff as ad
from . import discrimination as dmod
from . import solver as smod
from .autodiff import NonFiniteError, Tape, Tensor
from .corpus import Vocabulary, build_mask, build_vocab
from .model import ModelBundle, ModelConfig, build_model
from .optim import AdamW

__all__ = [
    "TrainConfig",
    "StepLosses",
    "EpochStats",
    "RunReport",
    "TrainingAborted",
    "RngStreams",
    "Trainer",
    "train",
    "learning_rate",
    "write_metrics_csv",
    "export_embeddings",
]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Hyperparameters; the defaults are the published full-data settings.

    Desk-scale runs usually override epochs (the CLI defaults it to 40).
    """

    lambda1: float = 0.01
    lambda2: float = 0.001
    batch_size: int = 32
    epochs: int = 160
    lr: float = 0.001
    lr_halving_every: int = 30
    dropout: float = 0.5
    beam: int = 5
    seed: int = 0
    levels: tuple = (1, 2)
    analogy_on: bool = True
    disc_on: bool = True
    grad_guided_on: bool = True
    extra_negs_on: bool = True
    strict_left_child: bool = False
    per_problem_pairs: int = 1
    max_len: int | None = None

    def __post_init__(self):
        if self.lambda1 < 0 or self.lambda2 < 0:
            raise ValueError("lambda weights must be non-negative")
        if self.batch_size < 1 or self.epochs < 0 or self.lr_halving_every < 1:
            raise ValueError("batch_size, epochs, lr_halving_every out of range")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.beam < 1 or self.per_problem_pairs < 1:
            raise ValueError("beam and per_problem_pairs must be positive")
        object.__setattr__(self, "levels", tuple(sorted(set(self.levels))))
        if any(k not in (1, 2, 3) for k in self.levels):
            raise ValueError("levels must be a subset of {1, 2, 3}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = list(self.levels)
        return d


def learning_rate(cfg: TrainConfig, epoch: int) -> float:
    """Halved every lr_halving_every epochs; epoch is 1-based."""
    return cfg.lr / (2.0 ** ((epoch - 1) // cfg.lr_halving_every))


@dataclass
class StepLosses:
    l_seq: float
    l_a: float
    l_s: float
    l_disc: float
    n_pairs: int
    n_negatives: int


@dataclass
class EpochStats:
    epoch: int
    lr: float
    l_seq: float
    l_a: float
    l_s: float
    l_disc: float
    dev_acc: float


class TrainingAborted(RuntimeError):
    """Raised when a step produces a non-finite quantity."""

    def __init__(self, message: str, batch_ids, epoch: int):
        super().__init__(f"{message} (epoch {epoch}, batch ids: {', '.join(batch_ids)})")
        self.batch_ids = list(batch_ids)
        self.epoch = epoch


@dataclass
class RunReport:
    config: dict
    model_config: dict
    n_train: int
    n_dev: int
    epochs: list
    best_epoch: int
    best_dev_accuracy: float
    bucket_accuracy: dict
    wall_time_s: float

    def to_dict(self) -> dict:
        return asdict(self)

    def comparable_dict(self) -> dict:
        """Everything the determinism contract covers (wall time varies
        between identical runs and is excluded)."""
        d = self.to_dict()
        d.pop("wall_time_s")
        return d

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2)


def write_metrics_csv(report: RunReport, path) -> None:
    import csv

    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["epoch", "l_seq", "l_a", "l_s", "l_disc", "dev_acc"])
        for e in report.epochs:
            w.writerow([e["epoch"], e["l_seq"], e["l_a"], e["l_s"], e["l_disc"], e["dev_acc"]])


class RngStreams:
    """Named substreams of the run seed, one per consumer, created in a
    fixed order: model init, shuffling, pair sampling, negative
    sampling, dropout."""

    def __init__(self, seed: int):
        master = np.random.SeedSequence(seed)
        model_ss, shuffle_ss, pairs_ss, negs_ss, drop_ss = master.spawn(5)
        self.model_seed = model_ss
        self.shuffle = np.random.default_rng(shuffle_ss)
        self.pairs = np.random.default_rng(pairs_ss)
        self.negatives = np.random.default_rng(negs_ss)
        self.dropout = np.random.default_rng(drop_ss)


class Trainer:
    """Holds the model, optimizers, signature index, and rng streams for
    one training run. Use train() unless you need stepwise control."""

    def __init__(self, train_records, dev_records, cfg: TrainConfig,
                 model_config: ModelConfig = ModelConfig(),
                 vocab: Vocabulary | None = None):
        if not train_records:
            raise ValueError("empty training corpus")
        self.cfg = cfg
        self.train_records = list(train_records)
        self.dev_records = list(dev_records)
        self.vocab = vocab if vocab is not None else build_vocab(self.train_records)
        for name, recs in (("train", self.train_records), ("dev", self.dev_records)):
            ids = [r.id for r in recs]
            if len(set(ids)) != len(ids):
                raise ValueError(f"duplicate problem ids in {name} corpus")
        self.streams = RngStreams(cfg.seed)
        self.bundle = build_model(self.vocab, model_config, self.streams.model_seed,
                                  levels=cfg.levels)
        # keyed per split: an id may legitimately appear in both corpora of
        # an overfit run, so train and dev masks must not share a table
        self.masks = {r.id: build_mask(r, self.vocab) for r in self.train_records}
        self.dev_masks = [build_mask(r, self.vocab) for r in self.dev_records]
        self.index = amod.build_index(self.train_records, cfg.levels,
                                      cfg.strict_left_child) if self.analogy_active else None
        self.opt_solver = AdamW(self.bundle.solver_params(), lr=cfg.lr)
        self.opt_disc = AdamW(self.bundle.discriminator_params(), lr=cfg.lr)
        self._epoch = 0

    @property
    def analogy_active(self) -> bool:
        """The analogy machinery runs only when it can influence training:
        flag on, lambda1 > 0, and at least one level configured."""
        return self.cfg.analogy_on and self.cfg.lambda1 > 0 and bool(self.cfg.levels)

    @property
    def guidance_active(self) -> bool:
        return self.cfg.disc_on and self.cfg.lambda2 > 0

    def _dev_masks(self):
        return self.dev_masks

    def train_step(self, batch, lr: float) -> StepLosses:
        batch = list(batch)
        if not batch:
            raise ValueError("train_step: empty batch")
        try:
            return self._step_inner(batch, lr)
        except NonFiniteError as e:
            raise TrainingAborted(str(e), [r.id for r in batch], self._epoch) from e

    def _step_inner(self, batch, lr: float) -> StepLosses:
        cfg = self.cfg
        batch_masks = [self.masks[r.id] for r in batch]

        # 1. analogy pairs for this batch
        if self.analogy_active:
            pairs = amod.sample_pairs(self.index, [r.id for r in batch],
                                      self.streams.pairs, cfg.per_problem_pairs)
        else:
            pairs = amod.PairBatch()

        # 2./3. negative sets and discriminator update
        l_disc = 0.0
        n_negatives = 0
        if cfg.disc_on:
            enc_eval = smod.encode_problems(batch, self.bundle.encoder, self.vocab)
            pvs = enc_eval.problem_vecs.data
            neg_sets = dmod.build_negative_sets(
                batch, pvs, self.train_records, batch_masks, self.vocab,
                self.bundle.sol_encoder, self.bundle.discriminator,
                self.streams.negatives, cfg.grad_guided_on, cfg.extra_negs_on,
                skip_unusable=True)
            neg_seqs, owners = [], []
            for i, ns in enumerate(neg_sets):
                for item in ns.items:
                    neg_seqs.append(item.tokens)
                    owners.append(i)
            n_negatives = len(neg_seqs)
            self.opt_disc.zero_grad()
            with Tape() as tape:
                gold_vecs = dmod.encode_solutions([r.gold_prefix for r in batch],
                                                  self.vocab, self.bundle.sol_encoder)
                neg_vecs = (dmod.encode_solutions(neg_seqs, self.vocab, self.bundle.sol_encoder)
                            if neg_seqs else Tensor(np.zeros((0, gold_vecs.data.shape[1]))))
                dl = dmod.discriminator_loss(Tensor(pvs), gold_vecs, neg_vecs,
                                             owners, self.bundle.discriminator)
            tape.backward(dl)
            self.opt_disc.step(lr=lr)
            l_disc = float(dl.data)

        # gold solution vectors under the just-updated discriminator; these
        # enter the solver loss as constants
        guide_vecs = None
        if self.guidance_active:
            guide_vecs = dmod.encode_solutions([r.gold_prefix for r in batch],
                                               self.vocab, self.bundle.sol_encoder).data

        # 4. solver update
        union = list(batch)
        seen = {r.id for r in batch}
        by_id = getattr(self, "_by_id", None)
        if by_id is None:
            by_id = {r.id: r for r in self.train_records}
            self._by_id = by_id
        for k in sorted(pairs.pairs):
            for a, b, _ in pairs.pairs[k]:
                for pid in (a, b):
                    if pid not in seen:
                        union.append(by_id[pid])
                        seen.add(pid)

        self.opt_solver.zero_grad()
        l_a = 0.0
        l_s = 0.0
        with Tape() as tape:
            enc = smod.encode_problems(union, self.bundle.encoder, self.vocab,
                                       training=True, p_drop=cfg.dropout,
                                       rng=self.streams.dropout)
            loss, _ = smod.teacher_forcing_loss(batch, enc, self.bundle.decoder,
                                                self.vocab, batch_masks,
                                                training=True, p_drop=cfg.dropout,
                                                rng=self.streams.dropout)
            l_seq = float(loss.data)
            if pairs.n_pairs():
                la_t = amod.analogy_loss(pairs, enc.problem_vecs, enc.row_of,
                                         self.bundle.heads)
                l_a = float(la_t.data)
                loss = ad.add(loss, ad.mul(la_t, cfg.lambda1))
            if guide_vecs is not None:
                rows = np.arange(len(batch))
                pv_batch = ad.take_rows(enc.problem_vecs, rows)
                ls_t = dmod.guidance_loss(pv_batch, guide_vecs,
                                          self.bundle.discriminator.w.data)
                l_s = float(ls_t.data)
                loss = ad.add(loss, ad.mul(ls_t, cfg.lambda2))
        tape.backward(loss)
        self.opt_solver.step(lr=lr)
        return StepLosses(l_seq, l_a, l_s, l_disc, pairs.n_pairs(), n_negatives)

    def evaluate(self, records=None, masks=None) -> float:
        records = self.dev_records if records is None else records
        masks = self._dev_masks() if masks is None else masks
        return smod.value_accuracy(records, self.bundle, masks,
                                   width=self.cfg.beam, max_len=self.cfg.max_len)

    def run(self) -> RunReport:
        cfg = self.cfg
        if not self.dev_records:
            raise ValueError("empty dev corpus")
        start = time.perf_counter()
        n = len(self.train_records)
        best_acc = -1.0
        best_epoch = 0
        best_params: dict | None = None
        epochs = []
        for epoch in range(1, cfg.epochs + 1):
            self._epoch = epoch
            lr = learning_rate(cfg, epoch)
            order = self.streams.shuffle.permutation(n)
            sums = np.zeros(4)
            seen = 0
            for lo in range(0, n, cfg.batch_size):
                batch = [self.train_records[i] for i in order[lo : lo + cfg.batch_size]]
                losses = self.train_step(batch, lr)
                w = len(batch)
                sums += w * np.array([losses.l_seq, losses.l_a, losses.l_s, losses.l_disc])
                seen += w
            means = sums / seen
            dev_acc = self.evaluate()
            epochs.append({
                "epoch": epoch,
                "lr": lr,
                "l_seq": float(means[0]),
                "l_a": float(means[1]),
                "l_s": float(means[2]),
                "l_disc": float(means[3]),
                "dev_acc": dev_acc,
            })
            if dev_acc > best_acc:
                best_acc = dev_acc
                best_epoch = epoch
                best_params = {name: p.data.copy()
                               for name, p in self.bundle.named_params().items()}
            logger.info("epoch %d lr %.2g l_seq %.4f l_a %.4f l_s %.4f l_disc %.4f dev %.3f",
                        epoch, lr, means[0], means[1], means[2], means[3], dev_acc)
        if best_params is not None:
            for name, p in self.bundle.named_params().items():
                p.data = best_params[name]
        buckets = smod.bucket_accuracy(self.dev_records, self.bundle, self._dev_masks(),
                                       width=cfg.beam, max_len=cfg.max_len)
        return RunReport(
            config=cfg.to_dict(),
            model_config=asdict(self.bundle.config),
            n_train=n,
            n_dev=len(self.dev_records),
            epochs=epochs,
            best_epoch=best_epoch,
            best_dev_accuracy=best_acc if cfg.epochs else 0.0,
            bucket_accuracy={str(k): v for k, v in buckets.items()},
            wall_time_s=time.perf_counter() - start,
        )


def train(train_records, dev_records, cfg: TrainConfig,
          model_config: ModelConfig = ModelConfig()) -> tuple[ModelBundle, RunReport]:
    """Train a fresh model; returns the best-dev bundle and the report."""
    trainer = Trainer(train_records, dev_records, cfg, model_config)
    report = trainer.run()
    return trainer.bundle, report


def export_embeddings(bundle: ModelBundle, records, sample: int | None = None,
                      seed: int = 0) -> list[dict]:
    """Problem vectors with root-operator class labels.

    With sample=N, restricts to problems whose root operator is one of
    + - * / and draws N of them without replacement (all, if fewer).
    """
    from . import expr

    records = list(records)
    if sample is not None:
        pool = [r for r in records
                if expr.signature(r.gold_prefix, 1) in (("+",), ("-",), ("*",), ("/",))]
        rng = np.random.default_rng(seed)
        take = min(sample, len(pool))
        idx = sorted(rng.choice(len(pool), size=take, replace=False).tolist())
        records = [pool[i] for i in idx]
    rows = []
    for lo in range(0, len(records), 64):
        chunk = records[lo : lo + 64]
        enc = smod.encode_problems(chunk, bundle.encoder, bundle.vocab)
        for i, r in enumerate(chunk):
            sig = expr.signature(r.gold_prefix, 1)
            rows.append({
                "id": r.id,
                "root_operator": sig[0] if sig else None,
                "problem_vec": enc.problem_vecs.data[i].tolist(),
            })
    return rows
