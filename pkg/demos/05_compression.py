"""Entity-table compression by popularity.

Keeping the top k% most popular entity rows and pointing every other
entity at one shared row shrinks the dominant parameter block by almost
(100-k)% while leaving predictions for retained entities untouched: their
rows are bit-identical, and the tail rows were mostly masked during
training anyway.
"""

import tempfile

import numpy as np

from tailned.config import TrainConfig
from tailned.evalsuite import compress_embeddings
from tailned.model import prepare_sentence
from tailned.syncorpus import GenParams, generate
from tailned.trainer import train

params = GenParams(n_entities=100, n_types=8, n_relations=4, n_sentences=200,
                   k_ambiguity=5, unseen_fraction=0.1,
                   pattern_mix=(0.5, 0.25, 0.25, 0.0), seed=5)
cfg = TrainConfig(h=32, heads=4, d_u=16, d_t=16, d_r=16, d_c=16,
                  epochs=4, dropout=0.0, seed=5)

with tempfile.TemporaryDirectory() as tmp:
    meta, kb, splits = generate(params, tmp)
    model, _ = train(splits["train"], kb, cfg)

    for k in (100, 25, 5):
        small = compress_embeddings(model, kb, k)
        full_rows = model.tables.entity.shape[0]
        kept_rows = small.tables.entity.shape[0]
        saved = 1 - small.tables.entity.data.nbytes / model.tables.entity.data.nbytes
        print(f"k={k:>3}%  entity rows {full_rows} -> {kept_rows}  "
              f"bytes saved {saved:.1%}  (ratio {100 - k})")

    small = compress_embeddings(model, kb, 90)

    # predictions for mentions whose candidates were all retained are
    # unchanged; everything else degrades gracefully toward the shared row
    kept = {e for e in range(model.tables.entity.shape[0])
            if small.tables.entity_row_map[e] < small.tables.entity.shape[0] - 1}
    checked = changed = 0
    for s in splits["test"]:
        prep = prepare_sentence(s, kb, model.vocab, model.config,
                                require_gold=False)
        if prep is None:
            continue
        cands = set(prep.cand_ids[prep.cand_mask > 0].tolist())
        if not cands <= kept:
            continue
        a = model.predict_sentence(prep, kb)
        b = small.predict_sentence(prep, kb)
        checked += len(a)
        changed += sum(x != y for x, y in zip(a, b))
    print(f"\nretained-only mentions checked: {checked}, predictions changed: {changed}")
    assert changed == 0
