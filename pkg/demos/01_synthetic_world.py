"""Tour of the synthetic disambiguation world.

Generates a small KB and corpus, then walks through what the generator
guarantees: five-way ambiguous aliases, a popular untyped member per
group, typed members with relation edges, and one sentence per reasoning
pattern whose gold is recoverable by a closed-form rule.
"""

import tempfile
from pathlib import Path

from tailned.kb import candidates, load_kb_dir
from tailned.syncorpus import GenParams, generate, load_answer_key

params = GenParams(n_entities=60, n_types=8, n_relations=4, n_sentences=120,
                   k_ambiguity=4, unseen_fraction=0.1, seed=11)

with tempfile.TemporaryDirectory() as tmp:
    meta, kb, splits = generate(params, tmp)
    key = load_answer_key(Path(tmp) / "answers.tsv")

    print("== knowledge base ==")
    print(f"entities: {kb.n_entities}, aliases: {len(kb.candidate_map)}, "
          f"types: {kb.type_vocab_size}, relations: {kb.relation_vocab_size}")

    alias = "alias0000"
    print(f"\ncandidates for {alias!r} (id, prior):")
    for eid, prior in candidates(alias, kb, k=10):
        types = kb.types_of[eid]
        print(f"  {kb.entity_keys[eid]}  prior={prior:<5} "
              f"types={types if types else '(none, the popular default)'}")

    print("\n== one sentence per reasoning pattern ==")
    shown = set()
    for split in ("train", "dev", "test"):
        for s in splits[split]:
            pattern, golds = key[s.sentence_id]
            if pattern in shown:
                continue
            shown.add(pattern)
            print(f"\n[{pattern}] {s.sentence_id} ({split})")
            print(" ", " ".join(s.tokens))
            for m in s.mentions:
                print(f"  mention {s.mention_text(m)!r} -> gold {m.gold}")
    assert shown == {"memorization", "affordance", "kg", "consistency"}

    print("\nWhat to look for:")
    print("- memorization: the mem_* token names the gold outright")
    print("- affordance: aff<type>_* tokens name only the gold's type")
    print("- kg: an anchor alias plus rel* cue points across a relation edge")
    print("- consistency: three aliases joined by listcue_* share one type")
