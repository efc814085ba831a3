"""Evaluation: micro precision/recall/F1 over popularity slices, the
benchmark filter, reasoning-pattern slices, type-affordance keyword mining,
and entity-embedding compression.

Slices follow gold-label training counts: unseen = 0, tail = 1-10,
torso = 11-1000 (inclusive), head > 1000. Metrics count anchor (non-weak)
mentions only.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from . import kb as kbmod
from .model import prepare_sentence

SLICES = ("unseen", "tail", "torso", "head")


def micro_prf(n_correct: int, n_extracted: int, n_gold: int):
    """Micro precision, recall, F1 from raw counts; zero denominators give 0."""
    if n_correct < 0 or n_correct > min(n_extracted, n_gold):
        raise ValueError(
            f"inconsistent counts: correct={n_correct}, extracted={n_extracted}, gold={n_gold}")
    p = n_correct / n_extracted if n_extracted else 0.0
    r = n_correct / n_gold if n_gold else 0.0
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return p, r, f1


def slice_assign(popularity_count: int) -> str:
    if popularity_count < 0:
        raise ValueError(f"negative popularity count {popularity_count}")
    if popularity_count == 0:
        return "unseen"
    if popularity_count <= 10:
        return "tail"
    if popularity_count <= 1000:
        return "torso"
    return "head"


def eval_filter(examples, kb, k: int = 30):
    """Keep (sentence, mention) pairs whose gold is among the candidates and
    whose candidate list has more than one entry; report drop counts.

    examples: iterable of (sentence, mention) pairs.
    """
    kept = []
    dropped_gold = dropped_single = 0
    for sentence, mention in examples:
        cands = kbmod.candidates(sentence.mention_text(mention), kb, k)
        gold_id = kb.entity_ids.get(mention.gold, -1)
        if not any(eid == gold_id for eid, _ in cands):
            dropped_gold += 1
            continue
        if len(cands) <= 1:
            dropped_single += 1
            continue
        kept.append((sentence, mention))
    return kept, {"dropped_gold_not_candidate": dropped_gold,
                  "dropped_single_candidate": dropped_single}


@dataclass
class SliceMetrics:
    precision: float
    recall: float
    f1: float
    n_mentions: int
    n_correct: int


@dataclass
class EvalReport:
    overall: SliceMetrics
    slices: dict[str, SliceMetrics] = field(default_factory=dict)  # absent = empty slice
    filter_stats: dict[str, int] = field(default_factory=dict)

    def text(self) -> str:
        lines = []
        for name in ("overall",) + SLICES:
            metrics = self.overall if name == "overall" else self.slices.get(name)
            lines.append(f"[{name}]")
            if metrics is None:
                lines.append("  (no mentions)")
            else:
                lines.append(f"  precision: {metrics.precision:.4f}")
                lines.append(f"  recall: {metrics.recall:.4f}")
                lines.append(f"  f1: {metrics.f1:.4f}")
                lines.append(f"  n_mentions: {metrics.n_mentions}")
        for key, value in sorted(self.filter_stats.items()):
            lines.append(f"# {key}: {value}")
        return "\n".join(lines) + "\n"


def evaluate(model, eval_set, kb) -> EvalReport:
    """Per-slice micro metrics for a model over anchor (non-weak) labels.

    Mentions are filtered per the benchmark convention (gold in candidates,
    more than one candidate); the filtered set defines both denominators, so
    micro P = R here, and the filter statistics record what was dropped.
    """
    pairs = [(s, m) for s in eval_set for m in s.mentions if not m.weak]
    kept, stats = eval_filter(pairs, kb, model.config.k)
    keep_keys = {(id(s), m.start, m.end) for s, m in kept}
    popularity = model.popularity or [0] * kb.n_entities

    counts = defaultdict(lambda: [0, 0])  # slice -> [correct, total]
    for sentence in eval_set:
        prep = prepare_sentence(sentence, kb, model.vocab, model.config, require_gold=False)
        if prep is None:
            continue
        predicted = model.predict_sentence(prep, kb)
        for i, span in enumerate(prep.spans):
            if prep.weak[i] or (id(sentence), span[0], span[1]) not in keep_keys:
                continue
            gold = int(prep.gold_ids[i])
            label = slice_assign(popularity[gold]) if gold >= 0 else "unseen"
            bucket = counts[label]
            bucket[1] += 1
            if predicted[i] == gold:
                bucket[0] += 1

    def metrics(correct, total):
        p, r, f1 = micro_prf(correct, total, total)
        return SliceMetrics(p, r, f1, total, correct)

    total_correct = sum(c for c, _ in counts.values())
    total_n = sum(n for _, n in counts.values())
    report = EvalReport(overall=metrics(total_correct, total_n), filter_stats=stats)
    for name in SLICES:
        if name in counts:
            report.slices[name] = metrics(*counts[name])
    return report


# ---------------------------------------------------------------------------
# reasoning-pattern slices


def pattern_slices(eval_set, kb, keyword_table=None):
    """Assign (sentence_id, mention index) pairs to the four reasoning
    patterns; subsets may overlap.

    entity: the gold has no type and no relation signals. consistency: the
    mention is part of three or more sequential distinct golds sharing a
    type. kg: another gold in the sentence is adjacent in some KG graph.
    affordance: the sentence contains a keyword afforded by the gold's type
    (keyword_table: type id -> iterable of keywords, from
    affordance_keywords).
    """
    out = {"entity": [], "consistency": [], "kg": [], "affordance": []}
    coverage_total = 0
    for sentence in eval_set:
        golds = []
        for m in sentence.mentions:
            gid = kb.entity_ids.get(m.gold, -1)
            golds.append(gid)
        coverage_total += len(sentence.mentions)
        token_set = {t.lower() for t in sentence.tokens}
        ordered = sorted(range(len(sentence.mentions)),
                         key=lambda i: sentence.mentions[i].start)

        for idx, gid in enumerate(golds):
            if gid < 0:
                continue
            key = (sentence.sentence_id, idx)
            if not kb.types_of[gid] and not kb.relations_of[gid]:
                out["entity"].append(key)
            if any(adj.weight(gid, other) > 0
                   for adj in kb.adjacencies.values()
                   for j, other in enumerate(golds) if j != idx and other >= 0):
                out["kg"].append(key)
            if keyword_table:
                afforded = set()
                for tid in kb.types_of[gid]:
                    afforded.update(keyword_table.get(tid, ()))
                if afforded & token_set:
                    out["affordance"].append(key)

        # consistency: runs of >= 3 adjacent mentions, distinct golds, common type
        n = len(ordered)
        for start in range(n):
            for end in range(start + 3, n + 1):
                run = [golds[i] for i in ordered[start:end]]
                if any(g < 0 for g in run) or len(set(run)) != len(run):
                    continue
                common = set(kb.types_of[run[0]])
                for g in run[1:]:
                    common &= set(kb.types_of[g])
                if common:
                    for i in ordered[start:end]:
                        key = (sentence.sentence_id, i)
                        if key not in out["consistency"]:
                            out["consistency"].append(key)
    coverage = {name: (len(keys) / coverage_total if coverage_total else 0.0)
                for name, keys in out.items()}
    return out, coverage


def affordance_keywords(corpus, kb, type_id: int, n: int = 15):
    """Top-n TF-IDF keywords over training sentences whose gold has the type.

    TF counts tokens of those sentences with gold-mention tokens excluded;
    IDF is smoothed over all sentences: ln((1+N)/(1+df)) + 1. Ties order
    lexicographically.
    """
    n_sentences = len(corpus)
    if n_sentences == 0:
        raise ValueError("affordance mining needs a non-empty corpus")
    df = Counter()
    for s in corpus:
        df.update({t.lower() for t in s.tokens})

    tf = Counter()
    found = False
    for s in corpus:
        typed_mentions = [m for m in s.mentions
                          if m.gold in kb.entity_ids
                          and type_id in kb.types_of[kb.entity_ids[m.gold]]]
        if not typed_mentions:
            continue
        found = True
        mention_tokens = set()
        for m in s.mentions:
            mention_tokens.update(range(m.start, m.end))
        for i, tok in enumerate(s.tokens):
            if i not in mention_tokens:
                tf[tok.lower()] += 1
    if not found:
        raise ValueError(f"type {type_id} has no training examples")

    scored = []
    for tok, freq in tf.items():
        idf = math.log((1 + n_sentences) / (1 + df[tok])) + 1.0
        scored.append((-(freq * idf), tok))
    scored.sort()
    return [tok for _, tok in scored[:n]]


# ---------------------------------------------------------------------------
# embedding compression


def compress_embeddings(model, kb, k_percent: float):
    """Keep the top ceil(k% * |E|) entity rows by popularity (ties by id);
    every other entity shares one row copied from a seeded choice of
    zero-popularity entity. k=100 returns the model unchanged."""
    if not 0 < k_percent <= 100:
        raise ValueError(f"k_percent must be in (0, 100], got {k_percent}")
    n = model.n_entities
    popularity = np.asarray(model.popularity or [0] * n)
    keep = math.ceil(k_percent / 100.0 * n)
    if keep >= n:
        return model

    current_rows = model.tables.entity_row_map
    order = sorted(range(n), key=lambda e: (-popularity[e], e))
    retained = order[:keep]

    zero_pop = [e for e in range(n) if popularity[e] == 0]
    pool = zero_pop if zero_pop else [order[-1]]
    rng = np.random.default_rng(model.config.seed)
    donor = int(pool[int(rng.integers(len(pool)))])

    old = model.tables.entity.data
    new_rows = np.empty((keep + 1, old.shape[1]))
    row_map = np.full(n, keep, dtype=np.intp)
    for new_idx, e in enumerate(retained):
        new_rows[new_idx] = old[current_rows[e]]
        row_map[e] = new_idx
    new_rows[keep] = old[current_rows[donor]]

    tables = replace(model.tables, entity=ad.parameter(new_rows), entity_row_map=row_map)
    compressed = replace(model, tables=tables)
    return compressed
