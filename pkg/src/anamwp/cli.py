"""Command line pipeline: data generation, training, evaluation, and
inspection tools.

Training and evaluation write their delimited outputs (JSON report, CSV
metrics) together with rendered PNG figures, so a run directory is
self-contained.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import analogy as amod
from . import discrimination as dmod
from . import plots
from . import solver as smod
from .corpus import build_mask, emit, ingest
from .model import ModelConfig, load_checkpoint, save_checkpoint
from .synth import SynthConfig, generate_synthetic
from .train import TrainConfig, Trainer, export_embeddings, write_metrics_csv

# full-data epochs stay the library default; the CLI trains at desk
# scale unless told otherwise
DESK_EPOCHS = 40

logger = logging.getLogger(__name__)


def _load_config_file(path: str) -> dict:
    p = Path(path)
    raw = p.read_bytes()
    if p.suffix == ".json":
        return json.loads(raw.decode("utf-8"))
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(raw.decode("utf-8"))


_MODEL_KEYS = {f.name for f in fields(ModelConfig)}
_TRAIN_KEYS = {f.name for f in fields(TrainConfig)}


def _split_config(doc: dict) -> tuple[dict, dict]:
    """Route config-file keys to TrainConfig and ModelConfig; nested
    "model" tables are accepted too. Unknown keys are an error."""
    train_kw: dict = {}
    model_kw: dict = dict(doc.get("model", {}))
    for k, v in doc.items():
        if k == "model":
            continue
        if k in _TRAIN_KEYS:
            train_kw[k] = v
        elif k in _MODEL_KEYS:
            model_kw[k] = v
        else:
            raise SystemExit(f"unknown config key: {k!r}")
    bad = set(model_kw) - _MODEL_KEYS
    if bad:
        raise SystemExit(f"unknown model config keys: {sorted(bad)}")
    return train_kw, model_kw


def _parse_levels(text: str) -> tuple:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise SystemExit(f"bad --levels value: {text!r}") from None


def _train_kwargs(args) -> tuple[dict, dict]:
    train_kw: dict = {}
    model_kw: dict = {}
    if args.config:
        train_kw, model_kw = _split_config(_load_config_file(args.config))
    overrides = {
        "seed": args.seed,
        "epochs": args.epochs,
        "batch_size": args.batch_size,
        "lr": args.lr,
        "lambda1": args.lambda1,
        "lambda2": args.lambda2,
        "dropout": args.dropout,
        "beam": args.beam,
        "analogy_on": args.analogy,
        "disc_on": args.disc,
        "grad_guided_on": args.grad_guided,
        "extra_negs_on": args.extra_negs,
        "strict_left_child": args.strict_left_child,
    }
    if args.levels is not None:
        overrides["levels"] = _parse_levels(args.levels)
    for k, v in overrides.items():
        if v is not None:
            train_kw[k] = v
    train_kw.setdefault("epochs", DESK_EPOCHS)
    if args.emb_dim is not None:
        model_kw["emb_dim"] = args.emb_dim
    if args.hidden_dim is not None:
        model_kw["hidden_dim"] = args.hidden_dim
    if "levels" in train_kw:
        train_kw["levels"] = tuple(train_kw["levels"])
    return train_kw, model_kw


def cmd_gen_data(args) -> int:
    kw: dict = {"n_problems": args.n, "seed": args.seed, "max_ops": args.max_ops}
    if args.dist:
        kw["op_distribution"] = tuple(float(x) for x in args.dist.split(","))
    if args.templates:
        kw["templates"] = tuple(args.templates.split(","))
    records = generate_synthetic(SynthConfig(**kw))
    emit(records, args.out)
    print(f"wrote {len(records)} problems to {args.out}")
    return 0


def cmd_train(args) -> int:
    train_kw, model_kw = _train_kwargs(args)
    cfg = TrainConfig(**train_kw)
    mcfg = ModelConfig(**model_kw)
    train_records = ingest(args.train)
    dev_records = ingest(args.dev)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    trainer = Trainer(train_records, dev_records, cfg, mcfg)
    report = trainer.run()

    save_checkpoint(trainer.bundle, out_dir / "checkpoint.json")
    report.save(out_dir / "report.json")
    write_metrics_csv(report, out_dir / "metrics.csv")
    plots.plot_training_curves(report, out_dir / "curves.png")
    plots.plot_bucket_accuracy(report.bucket_accuracy, out_dir / "buckets.png",
                               title="dev accuracy by operator count")
    print(f"best dev accuracy {report.best_dev_accuracy:.4f} at epoch {report.best_epoch}")
    print(f"artifacts in {out_dir}: checkpoint.json report.json metrics.csv "
          f"curves.png buckets.png")
    return 0


def cmd_eval(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    records = ingest(args.corpus)
    masks = [build_mask(r, bundle.vocab) for r in records]
    overall = smod.value_accuracy(records, bundle, masks, width=args.beam)
    buckets = smod.bucket_accuracy(records, bundle, masks, width=args.beam)
    doc = {
        "corpus": str(args.corpus),
        "n_problems": len(records),
        "beam": args.beam,
        "value_accuracy": overall,
        "buckets": {str(k): v for k, v in buckets.items()},
    }
    report = Path(args.report)
    report.parent.mkdir(parents=True, exist_ok=True)
    with open(report, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)

    import csv

    csv_path = report.with_suffix(".csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["bucket", "count", "percentage", "accuracy"])
        for k in sorted(buckets):
            b = buckets[k]
            w.writerow([k, b["count"], b["percentage"], b["accuracy"]])
    png_path = report.with_suffix(".png")
    plots.plot_bucket_accuracy(doc["buckets"], png_path)
    print(f"value accuracy {overall:.4f} over {len(records)} problems")
    print(f"wrote {report}, {csv_path}, {png_path}")
    return 0


def cmd_mine_pairs(args) -> int:
    records = ingest(args.corpus)
    levels = _parse_levels(args.level)
    index = amod.build_index(records, levels, args.strict_left_child)
    rng = np.random.default_rng(args.seed)
    sample = amod.sample_pairs(index, [r.id for r in records], rng)
    doc: dict = {"n_problems": len(records), "levels": {}}
    for k in levels:
        buckets = index.buckets[k]
        sizes = sorted((len(v) for v in buckets.values()), reverse=True)
        pairs = sample.pairs.get(k, [])
        doc["levels"][str(k)] = {
            "n_buckets": len(buckets),
            "largest_buckets": [
                {"signature": list(sig), "count": len(ids)}
                for sig, ids in sorted(buckets.items(),
                                       key=lambda kv: (-len(kv[1]), kv[0]))[:10]
            ],
            "bucket_sizes": sizes,
            "example_pairs": [
                {"a": a, "b": b, "analogous": bool(label)}
                for a, b, label in pairs[: args.examples]
            ],
        }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
    print(f"wrote bucket statistics for levels {list(levels)} to {args.out}")
    return 0


def cmd_negatives(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    records = ingest(args.corpus)
    by_id = {r.id: r for r in records}
    if args.problem_id not in by_id:
        raise SystemExit(f"problem id {args.problem_id!r} not in {args.corpus}")
    record = by_id[args.problem_id]
    mask = build_mask(record, bundle.vocab)
    enc = smod.encode_problems([record], bundle.encoder, bundle.vocab)
    pv = enc.problem_vecs.data[0]
    norms = dmod.position_gradient_norms(pv, record.gold_prefix, bundle.vocab,
                                         bundle.sol_encoder, bundle.discriminator)
    rng = np.random.default_rng(args.seed)
    ns = dmod.build_negative_set(record, pv, records, mask, bundle.vocab,
                                 bundle.sol_encoder, bundle.discriminator, rng,
                                 grad_guided=args.grad_guided,
                                 extra_negatives=args.extra_negs)
    from .expr import to_text

    doc = {
        "problem_id": record.id,
        "gold": to_text(record.gold_prefix),
        "replaceable_positions": dmod.replaceable_positions(record.gold_prefix,
                                                            mask, bundle.vocab),
        "gradient_norms": [float(x) for x in norms],
        "vulnerable_position": ns.gt_position,
        "gt_variant_count": ns.gt_variant_count,
        "random_source": ns.random_source,
        "negatives": [
            {"tokens": to_text(it.tokens), "provenance": it.provenance}
            for it in ns.items
        ],
    }
    json.dump(doc, sys.stdout, indent=2)
    print()
    return 0


def cmd_export_emb(args) -> int:
    bundle = load_checkpoint(args.checkpoint)
    records = ingest(args.corpus)
    rows = export_embeddings(bundle, records, sample=args.sample, seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8") as f:
        json.dump(rows, f)
    png = out.with_suffix(".png")
    plots.plot_embeddings(rows, png)
    print(f"wrote {len(rows)} problem vectors to {out} (figure: {png})")
    return 0


def _add_bool_flag(p, name: str, help_text: str) -> None:
    p.add_argument(f"--{name}", action=argparse.BooleanOptionalAction,
                   default=None, help=help_text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="anamwp",
                                description="analogy-and-discrimination math word problem solver")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress per epoch")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic corpus")
    g.add_argument("--n", type=int, required=True, help="number of problems")
    g.add_argument("--max-ops", type=int, default=4)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--dist", help="comma weights over 1..max-ops operator counts")
    g.add_argument("--templates", help="comma-separated template names")
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--train", required=True, help="training corpus (JSONL)")
    t.add_argument("--dev", required=True, help="dev corpus (JSONL)")
    t.add_argument("--out-dir", required=True)
    t.add_argument("--config", help="TOML or JSON config file")
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--epochs", type=int, default=None,
                   help=f"default {DESK_EPOCHS} (full-data runs use 160)")
    t.add_argument("--batch-size", type=int, default=None)
    t.add_argument("--lr", type=float, default=None)
    t.add_argument("--lambda1", type=float, default=None)
    t.add_argument("--lambda2", type=float, default=None)
    t.add_argument("--dropout", type=float, default=None)
    t.add_argument("--beam", type=int, default=None)
    t.add_argument("--levels", default=None, help="analogy levels, e.g. 1,2")
    t.add_argument("--emb-dim", type=int, default=None)
    t.add_argument("--hidden-dim", type=int, default=None)
    _add_bool_flag(t, "analogy", "analogy loss on/off")
    _add_bool_flag(t, "disc", "discrimination on/off")
    _add_bool_flag(t, "grad-guided", "gradient-guided token selection on/off")
    _add_bool_flag(t, "extra-negs", "random-negative augmentation on/off")
    _add_bool_flag(t, "strict-left-child", "level-2 signature uses left-child chain")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a corpus")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--beam", type=int, default=5)
    e.add_argument("--report", required=True, help="output JSON (CSV and PNG siblings)")
    e.set_defaults(func=cmd_eval)

    m = sub.add_parser("mine-pairs", help="dump analogy bucket statistics")
    m.add_argument("--corpus", required=True)
    m.add_argument("--level", default="1,2", help="levels, e.g. 1,2")
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--examples", type=int, default=20)
    m.add_argument("--strict-left-child", action="store_true")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mine_pairs)

    n = sub.add_parser("negatives", help="inspect the negative set of one problem")
    n.add_argument("--checkpoint", required=True)
    n.add_argument("--corpus", required=True)
    n.add_argument("--problem-id", required=True)
    n.add_argument("--seed", type=int, default=0)
    n.add_argument("--grad-guided", action=argparse.BooleanOptionalAction, default=True)
    n.add_argument("--extra-negs", action=argparse.BooleanOptionalAction, default=True)
    n.set_defaults(func=cmd_negatives)

    x = sub.add_parser("export-emb", help="export problem vectors with root-operator labels")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--corpus", required=True)
    x.add_argument("--sample", type=int, default=None,
                   help="sample this many problems with root in + - * /")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out", required=True)
    x.set_defaults(func=cmd_export_emb)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
