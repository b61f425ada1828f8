"""Acceptance suite: one test per numbered criterion.

Criteria 1-5 are oracle checks (finite differences, an independent infix
evaluator, brute-force pair mining). Criteria 6-9 are seeded runs at desk
scale; the directional fixture trains ten small models and dominates the
suite's runtime.
"""

import json
import math
import time

import numpy as np
import pytest

import anamwp.autodiff as ad
from anamwp.analogy import analogy_loss, build_index, sample_pairs
from anamwp.autodiff import Tensor, finite_diff_check
from anamwp.corpus import build_mask, build_vocab, record_from_obj
from anamwp.discrimination import (build_negative_sets, discriminate,
                                   discriminator_loss, encode_solutions,
                                   guidance_loss, replaceable_positions,
                                   select_vulnerable_token)
from anamwp.expr import (EvalError, Operator, evaluate, prefix_to_tree,
                         random_prefix, render_infix, signature,
                         validate_prefix)
from anamwp.model import ModelConfig, build_model
from anamwp.solver import (bucket_accuracy, encode_problems,
                           teacher_forcing_loss, value_accuracy)
from anamwp.synth import SynthConfig, generate_synthetic
from anamwp.train import (TrainConfig, Trainer, export_embeddings,
                          learning_rate, train)
from oracles import eval_infix

DESK_EPOCHS = 4
LONG_EPOCHS = 12
DESK_DIST = (0.62, 0.22, 0.10, 0.06)


def _line(n, ok, detail):
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    assert ok, detail


def _perturb(bundle, seed, scale=0.2):
    rng = np.random.default_rng(seed)
    for p in bundle.all_params():
        p.data += rng.normal(0.0, scale, p.data.shape)
    return bundle


# --- criterion 1: gradient integrity ---------------------------------------


_FD_CORPUS = [
    {"id": "fd-1", "text": "3 pens plus 4 more", "equation": "3 + 4", "answer": 7},
    {"id": "fd-2", "text": "5 cups plus 2 cups", "equation": "5 + 2", "answer": 7},
    {"id": "fd-3", "text": "9 figs minus 4 figs", "equation": "9 - 4", "answer": 5},
    {"id": "fd-4", "text": "7 nuts minus 2 nuts", "equation": "7 - 2", "answer": 5},
]


def _joint_loss_fd_error(seed):
    """Finite-difference error of the joint loss over one tensor of every
    layer type, on a tiny model far from the zero-init point."""
    recs = [record_from_obj(o) for o in _FD_CORPUS]
    vocab = build_vocab(recs)
    bundle = build_model(vocab, ModelConfig(emb_dim=3, hidden_dim=4),
                         np.random.SeedSequence(seed), levels=(1, 2))
    _perturb(bundle, seed + 1)
    rng = np.random.default_rng(seed)
    pairs = sample_pairs(build_index(recs, (1, 2)), [r.id for r in recs], rng)
    assert pairs.n_pairs() > 0
    masks = [build_mask(r, vocab) for r in recs]
    enc0 = encode_problems(recs, bundle.encoder, vocab)
    sets = build_negative_sets(recs, enc0.problem_vecs.data, recs, masks,
                               vocab, bundle.sol_encoder,
                               bundle.discriminator, rng)
    neg_seqs, owners = [], []
    for i, ns in enumerate(sets):
        for item in ns.items:
            neg_seqs.append(item.tokens)
            owners.append(i)
    assert neg_seqs
    golds = [r.gold_prefix for r in recs]
    # the guidance term takes the solution vectors and W as constants, so
    # the checked function freezes them the same way the training step does
    guide = encode_solutions(golds, vocab, bundle.sol_encoder).data.copy()
    w_snap = bundle.discriminator.w.data.copy()

    def f():
        enc = encode_problems(recs, bundle.encoder, vocab)
        loss, _ = teacher_forcing_loss(recs, enc, bundle.decoder, vocab, masks)
        loss = ad.add(loss, ad.mul(analogy_loss(pairs, enc.problem_vecs,
                                                enc.row_of, bundle.heads), 0.01))
        loss = ad.add(loss, ad.mul(guidance_loss(enc.problem_vecs, guide, w_snap),
                                   0.001))
        gold_vecs = encode_solutions(golds, vocab, bundle.sol_encoder)
        neg_vecs = encode_solutions(neg_seqs, vocab, bundle.sol_encoder)
        return ad.add(loss, discriminator_loss(enc.problem_vecs, gold_vecs,
                                               neg_vecs, owners,
                                               bundle.discriminator))

    e, d = bundle.encoder, bundle.decoder
    params = [
        e.emb.table,                 # embeddings
        e.fwd.un, e.bwd.wz,          # encoder BiGRU cells
        d.cell.wn,                   # decoder cell
        bundle.sol_encoder.cell.un,  # solution-encoder cell
        bundle.heads[1].lin1.w,      # analogy MLP head
        bundle.heads[1].lin2.w,
        bundle.discriminator.w,      # bilinear W
        d.out.b, d.attn_v.w,         # output projection and attention,
    ]                                # both feeding the masked softmax loss
    return finite_diff_check(f, params)


def test_criterion_1_gradient_integrity():
    t0 = time.time()
    worst = max(_joint_loss_fd_error(seed) for seed in range(20))
    dt = time.time() - t0
    _line(1, worst < 1e-4 and dt < 60.0,
          f"max rel err {worst:.2e} (< 1e-4) over 20 seeds in {dt:.1f}s (< 60s)")


# --- criterion 2: expression evaluation vs independent infix oracle --------


def test_criterion_2_expression_oracle():
    rng = np.random.default_rng(202)
    checked = 0
    worst = 0.0
    while checked < 1000:
        n_slots = int(rng.integers(1, 5))
        values = tuple(float(rng.integers(1, 20)) / 2.0 for _ in range(n_slots))
        tokens = random_prefix(rng, int(rng.integers(1, 6)), n_slots)
        try:
            got = evaluate(tokens, values)
        except EvalError:
            continue  # division by zero or overflow; not comparable
        text = render_infix(prefix_to_tree(tokens), values)
        want = eval_infix(text)
        rel = abs(got - want) / max(1e-12, abs(want))
        assert rel <= 1e-9, f"{text}: {got} vs oracle {want}"
        worst = max(worst, rel)
        checked += 1
    _line(2, True, f"1000 random equations agree with the infix oracle, "
                   f"worst rel diff {worst:.1e} (<= 1e-9)")


# --- criterion 3: signature index vs brute-force pair mining ---------------


def test_criterion_3_analogy_mining_oracle():
    recs = generate_synthetic(SynthConfig(200, seed=31))
    idx = build_index(recs, (1, 2))
    for k in (1, 2):
        sigs = {r.id: signature(r.gold_prefix, k) for r in recs}
        brute = {tuple(sorted((a.id, b.id)))
                 for i, a in enumerate(recs) for b in recs[i + 1:]
                 if sigs[a.id] is not None and sigs[a.id] == sigs[b.id]}
        mined = set()
        for bucket in idx.buckets[k].values():
            for i in range(len(bucket)):
                for j in range(i + 1, len(bucket)):
                    mined.add(tuple(sorted((bucket[i], bucket[j]))))
        assert mined == brute, f"pair sets differ at k={k}"
    _line(3, True, "index pairs match brute-force signature comparison "
                   "on 200 problems at k=1 and k=2")


# --- criterion 4: negative-set properties over 10^4 sets -------------------


def test_criterion_4_negative_set_properties():
    recs = generate_synthetic(SynthConfig(400, seed=41))
    vocab = build_vocab(recs)
    bundle = build_model(vocab, ModelConfig(emb_dim=8, hidden_dim=16),
                         np.random.SeedSequence(4), levels=(1,))
    _perturb(bundle, 5, scale=0.1)
    masks = [build_mask(r, vocab) for r in recs]
    pvs = encode_problems(recs, bundle.encoder, vocab).problem_vecs.data
    rng = np.random.default_rng(4)
    total = n_items = op_positions = 0
    for p in range(25):
        for lo in range(0, len(recs), 100):
            batch = recs[lo:lo + 100]
            sets = build_negative_sets(batch, pvs[lo:lo + 100], recs,
                                       masks[lo:lo + 100], vocab,
                                       bundle.sol_encoder,
                                       bundle.discriminator, rng,
                                       grad_guided=(p % 2 == 0))
            for r, ns in zip(batch, sets):
                total += 1
                for it in ns.items:
                    n_items += 1
                    assert validate_prefix(it.tokens), r.id
                    assert tuple(it.tokens) != tuple(r.gold_prefix), r.id
                    try:
                        v = evaluate(it.tokens, r.slot_values)
                    except EvalError:
                        continue  # not evaluable, so certainly not the gold value
                    assert abs(v - r.gold_answer) > 1e-6 * max(1.0, abs(r.gold_answer)), r.id
                if ns.gt_position is not None and isinstance(
                        r.gold_prefix[ns.gt_position], Operator):
                    assert ns.gt_variant_count == 4, r.id
                    op_positions += 1
    assert total == 10_000
    assert op_positions > 0
    _line(4, True, f"10^4 sets ({n_items} negatives): all arity-valid, != gold "
                   f"tokens, != gold value; {op_positions} operator positions "
                   f"each enumerated exactly 4 variants")


# --- criterion 5: gradient token selection vs finite differences -----------


def _fd_position_norms(pv, ids, encoder, disc, eps=1e-5):
    emb = encoder.emb.table.data[list(ids)].copy()
    w = disc.w.data
    norms = []
    for t in range(len(ids)):
        acc = 0.0
        for e in range(emb.shape[1]):
            bumped = emb.copy()
            bumped[t, e] += eps
            hi = float(pv @ w @ encoder.encode_embedded(Tensor(bumped)).data[0])
            bumped[t, e] -= 2 * eps
            lo = float(pv @ w @ encoder.encode_embedded(Tensor(bumped)).data[0])
            acc += ((hi - lo) / (2 * eps)) ** 2
        norms.append(math.sqrt(acc))
    return np.array(norms)


def test_criterion_5_vulnerable_token_fidelity():
    recs = generate_synthetic(SynthConfig(50, seed=51))
    vocab = build_vocab(recs)
    bundle = build_model(vocab, ModelConfig(emb_dim=6, hidden_dim=12),
                         np.random.SeedSequence(5), levels=(1,))
    _perturb(bundle, 6)
    enc = encode_problems(recs, bundle.encoder, vocab)
    rng = np.random.default_rng(55)
    for i, r in enumerate(recs):
        mask = build_mask(r, vocab)
        tokens = random_prefix(rng, int(rng.integers(1, 4)), len(r.slot_values))
        pv = enc.problem_vecs.data[i]
        chosen = select_vulnerable_token(pv, tokens, mask, vocab,
                                         bundle.sol_encoder,
                                         bundle.discriminator)
        fd = _fd_position_norms(pv, vocab.encode_tokens(tokens),
                                bundle.sol_encoder, bundle.discriminator)
        repl = replaceable_positions(tokens, mask, vocab)
        assert chosen == repl[int(np.argmax(fd[repl]))], (r.id, tokens)
    _line(5, True, "gradient-selected position equals the finite-difference "
                   "argmax on 50/50 instances")


# --- criterion 6: overfit smoke test ---------------------------------------


def _run_epochs(trainer, records, first, last):
    n = len(records)
    bs = trainer.cfg.batch_size
    for epoch in range(first, last + 1):
        trainer._epoch = epoch
        lr = learning_rate(trainer.cfg, epoch)
        perm = trainer.streams.shuffle.permutation(n)
        for lo in range(0, n, bs):
            trainer.train_step([records[i] for i in perm[lo:lo + bs]], lr)


def test_criterion_6_overfit_smoke():
    recs = generate_synthetic(SynthConfig(64, seed=64))
    cfg = TrainConfig(seed=0, epochs=300, lr=0.002, lr_halving_every=150,
                      batch_size=16)
    tr = Trainer(recs, recs, cfg, ModelConfig(emb_dim=32, hidden_dim=64))
    t0 = time.time()
    reached, acc = None, 0.0
    for epoch in range(10, 301, 10):
        _run_epochs(tr, recs, epoch - 9, epoch)
        acc = value_accuracy(recs, tr.bundle, width=cfg.beam)
        if acc >= 0.95:
            reached = epoch
            break
    dt = time.time() - t0
    _line(6, reached is not None and dt < 300.0,
          f"64-problem value accuracy {acc:.3f} (>= 0.95) at epoch "
          f"{reached} (<= 300) in {dt:.0f}s (< 300s)")


# --- criteria 7/8 + embedding comparison share one desk-scale run ----------
#
# The scored comparison (criterion 7) reads both arms at DESK_EPOCHS, before
# the templates saturate and the arms collapse into ties. The seed-0 trainers
# then continue to LONG_EPOCHS; those converged bundles feed criterion 8 and
# the embedding comparison. Mid-run evaluation draws nothing from the trainer
# streams, so the continuation matches an uninterrupted LONG_EPOCHS run.


@pytest.fixture(scope="module")
def desk_run():
    train_recs = generate_synthetic(SynthConfig(2000, seed=100,
                                                op_distribution=DESK_DIST))
    test_recs = generate_synthetic(SynthConfig(500, seed=101,
                                               op_distribution=DESK_DIST))
    t0 = time.time()
    results, bundles = {}, {}
    for seed in range(5):
        for name, flags in (("base", dict(analogy_on=False, disc_on=False,
                                          grad_guided_on=False,
                                          extra_negs_on=False)),
                            ("full", {})):
            cfg = TrainConfig(seed=seed, epochs=DESK_EPOCHS, **flags)
            tr = Trainer(train_recs, [], cfg)
            _run_epochs(tr, train_recs, 1, DESK_EPOCHS)
            results[name, seed] = (
                value_accuracy(test_recs, tr.bundle, width=cfg.beam),
                bucket_accuracy(test_recs, tr.bundle, width=cfg.beam),
            )
            if seed == 0:
                _run_epochs(tr, train_recs, DESK_EPOCHS + 1, LONG_EPOCHS)
                bundles[name] = tr.bundle
    return {"results": results, "bundles": bundles, "test": test_recs,
            "wall": time.time() - t0}


def _bucket_mean(results, name, keys):
    per_seed = []
    for seed in range(5):
        buckets = results[name, seed][1]
        num = sum(buckets[k]["accuracy"] * buckets[k]["count"]
                  for k in keys if k in buckets)
        den = sum(buckets[k]["count"] for k in keys if k in buckets)
        per_seed.append(num / den)
    return float(np.mean(per_seed))


def test_criterion_7_directional_end_to_end(desk_run):
    res = desk_run["results"]
    wins = sum(res["full", s][0] >= res["base", s][0] for s in range(5))
    head_gain = (_bucket_mean(res, "full", [1]) - _bucket_mean(res, "base", [1]))
    tail_gain = (_bucket_mean(res, "full", [3, 4])
                 - _bucket_mean(res, "base", [3, 4]))
    wall = desk_run["wall"]
    _line(7, wins >= 3 and tail_gain >= head_gain and wall < 3600.0,
          f"full >= base on {wins}/5 seeds (need 3), tail gain {tail_gain:+.4f} "
          f">= head gain {head_gain:+.4f}, wall {wall:.0f}s (< 3600s)")


def test_criterion_8_discriminator_separation(desk_run):
    bundle = desk_run["bundles"]["full"]
    held = desk_run["test"][:200]
    masks = [build_mask(r, bundle.vocab) for r in held]
    pvs = encode_problems(held, bundle.encoder, bundle.vocab).problem_vecs.data
    rng = np.random.default_rng(0)
    sets = build_negative_sets(held, pvs, held, masks, bundle.vocab,
                               bundle.sol_encoder, bundle.discriminator, rng,
                               skip_unusable=True)
    gold_vecs = encode_solutions([r.gold_prefix for r in held], bundle.vocab,
                                 bundle.sol_encoder).data
    gold_p, neg_p = [], []
    for i, ns in enumerate(sets):
        gold_p.append(discriminate(pvs[i], gold_vecs[i],
                                   bundle.discriminator)[1])
        if ns.items:
            nvecs = encode_solutions(ns.sequences(), bundle.vocab,
                                     bundle.sol_encoder).data
            neg_p.extend(discriminate(pvs[i], v, bundle.discriminator)[1]
                         for v in nvecs)
    separation = float(np.mean(gold_p) - np.mean(neg_p))
    _line(8, separation > 0.3,
          f"mean sigma(gold) - mean sigma(negative) = {separation:.3f} (> 0.3) "
          f"on {len(sets)} held-out problems")


# --- criterion 9: ablation wiring ------------------------------------------


def _grid(seed, epochs, bs):
    base = dict(seed=seed, epochs=epochs, batch_size=bs)
    off = dict(analogy_on=False, disc_on=False)
    return [
        ("baseline", TrainConfig(**base, **off)),
        ("analogy-k1", TrainConfig(**base, levels=(1,), disc_on=False)),
        ("analogy-k12", TrainConfig(**base, levels=(1, 2), disc_on=False)),
        ("analogy-k123", TrainConfig(**base, levels=(1, 2, 3), disc_on=False)),
        ("disc-grad", TrainConfig(**base, analogy_on=False,
                                  extra_negs_on=False)),
        ("disc-extra", TrainConfig(**base, analogy_on=False,
                                   grad_guided_on=False)),
        ("disc-both", TrainConfig(**base, analogy_on=False)),
        ("full", TrainConfig(**base, levels=(1, 2))),
    ]


def test_criterion_9_ablation_wiring():
    train_recs = generate_synthetic(SynthConfig(48, seed=91))
    dev_recs = generate_synthetic(SynthConfig(16, seed=92))
    mc = ModelConfig(emb_dim=16, hidden_dim=32)
    reports, bundles = {}, {}
    for name, cfg in _grid(7, epochs=2, bs=16):
        bundles[name], reports[name] = train(train_recs, dev_recs, cfg, mc)
        assert len(reports[name].epochs) == 2, name
    blobs = [json.dumps(r.comparable_dict(), sort_keys=True)
             for r in reports.values()]
    assert len(set(blobs)) == 8, "reports are not pairwise distinct"

    # lambda1 = lambda2 = 0 with every module switched on must retrace the
    # baseline trajectory exactly under the shared seed
    zero_cfg = TrainConfig(seed=7, epochs=2, batch_size=16,
                           lambda1=0.0, lambda2=0.0)
    zero_bundle, zero_report = train(train_recs, dev_recs, zero_cfg, mc)
    base_report = reports["baseline"]
    assert [e["l_seq"] for e in zero_report.epochs] == \
           [e["l_seq"] for e in base_report.epochs]
    assert [e["dev_acc"] for e in zero_report.epochs] == \
           [e["dev_acc"] for e in base_report.epochs]
    base_params = bundles["baseline"].named_params()
    solver_names = {p.name for p in bundles["baseline"].solver_params()}
    for name, p in zero_bundle.named_params().items():
        if name in solver_names:
            assert np.array_equal(p.data, base_params[name].data), name
    _line(9, True, "8 flag configurations completed with pairwise-distinct "
                   "reports; zero-lambda run retraces the baseline bitwise")


# --- embedding quality, seeded comparison (uses the desk run) ---------------


def test_embedding_separation_seeded_comparison(desk_run):
    metrics = pytest.importorskip("sklearn.metrics")
    scores = {}
    for name in ("base", "full"):
        rows = export_embeddings(desk_run["bundles"][name], desk_run["test"],
                                 sample=150, seed=0)
        x = np.array([r["problem_vec"] for r in rows])
        labels = [r["root_operator"] for r in rows]
        scores[name] = float(metrics.silhouette_score(x, labels))
    assert scores["full"] >= scores["base"], scores
    print(f"silhouette by root operator: full {scores['full']:.4f} >= "
          f"base {scores['base']:.4f}")
