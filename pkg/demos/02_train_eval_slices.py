"""Train a small disambiguator and read its popularity-sliced report.

The corpus is tiny so this runs in seconds; the point is the shape of the
workflow (generate, train, evaluate) and the slice report: accuracy is
broken out by how often each gold entity was seen in training, because a
single overall number hides tail behavior behind head-entity volume.
"""

import tempfile
from pathlib import Path

from tailned.config import TrainConfig
from tailned.evalsuite import evaluate
from tailned.model import prepare_sentence
from tailned.syncorpus import GenParams, generate, load_answer_key
from tailned.trainer import train

params = GenParams(n_entities=60, n_types=8, n_relations=4, n_sentences=320,
                   k_ambiguity=4, unseen_fraction=0.1, seed=11)
cfg = TrainConfig(h=32, heads=4, d_u=16, d_t=16, d_r=16, d_c=16,
                  epochs=20, lr=0.001, dropout=0.0, seed=11)

with tempfile.TemporaryDirectory() as tmp:
    meta, kb, splits = generate(params, tmp)
    print(f"training on {len(splits['train'])} sentences "
          f"({params.n_entities} entities, {cfg.epochs} epochs)...")
    model, log = train(splits["train"], kb, cfg)
    print(f"final loss {log[-1]['loss']:.3f}\n")

    report = evaluate(model, splits["test"], kb)
    print(report.text())

    # the same predictions, bucketed by reasoning pattern instead
    key = load_answer_key(Path(tmp) / "answers.tsv")
    buckets = {}
    for s in splits["test"]:
        prep = prepare_sentence(s, kb, model.vocab, model.config,
                                require_gold=False)
        if prep is None:
            continue
        predicted = model.predict_sentence(prep, kb)
        pattern, _ = key[s.sentence_id]
        hit, total = buckets.get(pattern, (0, 0))
        for i in range(prep.m):
            hit += int(predicted[i] == prep.gold_ids[i])
            total += 1
        buckets[pattern] = (hit, total)
    print("[patterns]")
    for pattern in sorted(buckets):
        hit, total = buckets[pattern]
        print(f"  {pattern}: {hit}/{total} = {hit / total:.3f}")

    print()
    print("The unseen slice is the one to watch: those entities were never")
    print("a training gold, so anything above the ~1/K prior baseline must")
    print("be carried by type and relation structure, not memorization.")
    print("At this miniature scale the structural circuits barely get")
    print("training signal; demos/06_tail_gap.py runs the scale where the")
    print("full model pulls cleanly away from a memorization-only ablation.")
