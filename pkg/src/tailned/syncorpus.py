"""Seeded synthetic KB + corpus where each reasoning pattern is, for
designated unseen entities, the only road to the right answer.

Construction. Entities form alias groups of exactly k_ambiguity members
sharing one alias. Member 0 of each group is the untyped, relation-free
"anchor": resolvable purely by memorization (and carrying the group's top
prior). Members 1..k-1 carry distinct fine types and one relation edge each
to another group's anchor. A designated share of groups mark their last
member unseen: it never appears as a train gold, so only structure can
name it at test time.

Patterns plant disjoint cue vocabularies:
  memorization   mem_<entity key>      (one token per entity)
  affordance     aff<type>_{a,b,c}     (type keywords)
  kg relation    rel<rid>_{a,b}        (relation keywords, next to an anchor
                                        mention connected to the gold)
  consistency    listcue_{a,b,c}       (list keyword joining >= 3 same-type
                                        golds from groups that share exactly
                                        that one type)
Filler tokens w0..w39 pad sentences. A rule-based oracle that reads the
planted cues must score 100% on every split; generation fails otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Mention, Sentence, save_corpus
from .kb import StructuredKB, load_kb
from .rng import RngStreams

LIST_CUES = ("listcue_a", "listcue_b", "listcue_c")
N_FILLERS = 40


@dataclass
class GenParams:
    n_entities: int = 500
    n_types: int = 20
    n_relations: int = 10
    n_sentences: int = 5000
    k_ambiguity: int = 5
    zipf_exponent: float = 1.1
    # memorization, affordance, kg, consistency
    pattern_mix: tuple = (0.4, 0.25, 0.2, 0.15)
    unseen_fraction: float = 0.1
    seed: int = 7
    n_coarse: int = 6
    dev_fraction: float = 0.1
    test_fraction: float = 0.2
    test_unseen_share: float = 0.5

    def validate(self) -> "GenParams":
        if self.k_ambiguity < 2 or self.k_ambiguity > self.n_entities:
            raise ValueError(f"k_ambiguity {self.k_ambiguity} infeasible for {self.n_entities} entities")
        if self.n_entities % self.k_ambiguity != 0:
            raise ValueError("n_entities must be a multiple of k_ambiguity")
        if self.k_ambiguity - 1 > self.n_types:
            raise ValueError("need at least k_ambiguity - 1 fine types")
        if abs(sum(self.pattern_mix) - 1.0) > 1e-9 or len(self.pattern_mix) != 4:
            raise ValueError("pattern_mix must be 4 proportions summing to 1")
        # Two groups' type sets (size k-1 each) can only intersect in a
        # single type when the type universe is large enough; consistency
        # sentences need such singleton intersections.
        if self.pattern_mix[3] > 0 and self.n_types < 2 * (self.k_ambiguity - 1) - 1:
            raise ValueError(
                "consistency sentences need n_types >= 2*(k_ambiguity-1)-1")
        if not 0 <= self.unseen_fraction <= 0.2:
            raise ValueError("unseen_fraction must be in [0, 0.2]")
        if self.dev_fraction + self.test_fraction >= 1.0:
            raise ValueError("dev and test fractions leave no training data")
        return self


@dataclass
class SynMeta:
    """Generator ground truth: group structure, cue maps, unseen set."""

    params: GenParams
    n_groups: int
    keys: list[list[str]]  # [group][member] -> entity key
    aliases: list[str]  # [group] -> alias token
    types: list[list[int | None]]  # [group][member] -> fine type (None = untyped)
    partners: list[list[int | None]]  # [group][member] -> partner anchor group
    rel_ids: list[list[int | None]]
    priors: list[int]  # [member] -> prior count
    unseen: set = field(default_factory=set)  # (group, member)
    group_of_alias: dict = field(default_factory=dict)
    members_by_type: dict = field(default_factory=dict)  # type -> [(g, j)]

    def type_set(self, g: int) -> set:
        return {t for t in self.types[g] if t is not None}

    def is_trained_member(self, g: int, j: int) -> bool:
        return (g, j) not in self.unseen

    def mem_token(self, key: str) -> str:
        return f"mem_{key}"

    def aff_tokens(self, type_id: int) -> tuple:
        return tuple(f"aff{type_id}_{x}" for x in "abc")

    def rel_tokens(self, rel_id: int) -> tuple:
        return tuple(f"rel{rel_id}_{x}" for x in "ab")


def apportion(n: int, proportions) -> list[int]:
    """Integer counts within one of n * p_i (largest-remainder rounding)."""
    raw = [n * p for p in proportions]
    counts = [int(math.floor(x)) for x in raw]
    remainders = sorted(range(len(raw)), key=lambda i: (raw[i] - counts[i], -i), reverse=True)
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    return counts


def generate_kb(params: GenParams, out_dir) -> tuple[SynMeta, StructuredKB]:
    """Write aliases/types/relations/coarse files and load them back through
    the regular KB loader."""
    params.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = RngStreams(params.seed).stream("kb")
    k = params.k_ambiguity
    n_groups = params.n_entities // k

    keys = [[f"E{g:04d}_{j}" for j in range(k)] for g in range(n_groups)]
    aliases = [f"alias{g:04d}" for g in range(n_groups)]

    # member types: member 0 untyped; the rest draw distinct fine types.
    # Redraw until every type has at least 3 trained members so each type
    # cue is learnable from training groups.
    n_unseen = int(round(params.unseen_fraction * params.n_entities))
    if n_unseen > n_groups:
        raise ValueError("unseen_fraction needs more groups than available")
    unseen = {(g, k - 1) for g in range(n_unseen)}

    for _ in range(50):
        types: list[list[int | None]] = []
        for g in range(n_groups):
            drawn = rng.choice(params.n_types, size=k - 1, replace=False)
            types.append([None] + [int(t) for t in drawn])
        trained_per_type = [0] * params.n_types
        for g in range(n_groups):
            for j in range(1, k):
                if (g, j) not in unseen:
                    trained_per_type[types[g][j]] += 1
        if min(trained_per_type) >= 3:
            break
    else:
        raise ValueError("could not assign types with enough trained members each")

    partners: list[list[int | None]] = []
    rel_ids: list[list[int | None]] = []
    for g in range(n_groups):
        prow: list[int | None] = [None]
        rrow: list[int | None] = [None]
        for j in range(1, k):
            p = (g + 13 * j + 7) % n_groups
            if p == g:
                p = (p + 1) % n_groups
            prow.append(p)
            rrow.append((g + j) % params.n_relations)
        partners.append(prow)
        rel_ids.append(rrow)

    priors = [max(1, int(round(1000 / (j + 1) ** params.zipf_exponent))) for j in range(k)]

    meta = SynMeta(
        params=params, n_groups=n_groups, keys=keys, aliases=aliases,
        types=types, partners=partners, rel_ids=rel_ids, priors=priors,
        unseen=unseen,
        group_of_alias={a: g for g, a in enumerate(aliases)},
    )
    for g in range(n_groups):
        for j in range(1, k):
            meta.members_by_type.setdefault(types[g][j], []).append((g, j))

    with open(out_dir / "aliases.tsv", "w", encoding="utf-8") as fh:
        for g in range(n_groups):
            for j in range(k):
                fh.write(f"{aliases[g]}\t{keys[g][j]}\t{priors[j]}\n")
    with open(out_dir / "types.tsv", "w", encoding="utf-8") as fh:
        for g in range(n_groups):
            for j in range(1, k):
                fh.write(f"{keys[g][j]}\t{types[g][j]}\n")
    with open(out_dir / "relations.tsv", "w", encoding="utf-8") as fh:
        for g in range(n_groups):
            for j in range(1, k):
                anchor = keys[partners[g][j]][0]
                fh.write(f"{keys[g][j]}\t{rel_ids[g][j]}\t{anchor}\n")
    with open(out_dir / "coarse.tsv", "w", encoding="utf-8") as fh:
        for g in range(n_groups):
            for j in range(1, k):
                fh.write(f"{keys[g][j]}\t{types[g][j] % params.n_coarse}\n")

    kb = load_kb(out_dir / "aliases.tsv", out_dir / "types.tsv",
                 out_dir / "relations.tsv", coarse_path=out_dir / "coarse.tsv")
    return meta, kb


# ---------------------------------------------------------------------------
# sentence builders


def _fillers(rng, lo=1, hi=3):
    return [f"w{int(i)}" for i in rng.integers(0, N_FILLERS, size=int(rng.integers(lo, hi + 1)))]


def _weighted_member(rng, eligible, weights):
    w = np.array([weights[j] for j in eligible], dtype=np.float64)
    w /= w.sum()
    return int(eligible[int(rng.choice(len(eligible), p=w))])


MEM_WEIGHTS = {0: 0.55, 1: 0.2, 2: 0.12, 3: 0.08, 4: 0.05}
STRUCT_WEIGHTS = {1: 0.4, 2: 0.3, 3: 0.2, 4: 0.1}


def _trained_members(meta: SynMeta, g: int, typed_only: bool):
    lo = 1 if typed_only else 0
    return [j for j in range(lo, meta.params.k_ambiguity)
            if meta.is_trained_member(g, j)]


def _mem_sentence(meta, rng, sid):
    g = int(rng.integers(meta.n_groups))
    j = _weighted_member(rng, _trained_members(meta, g, typed_only=False), MEM_WEIGHTS)
    key = meta.keys[g][j]
    tokens = _fillers(rng) + [meta.aliases[g], meta.mem_token(key)] + _fillers(rng)
    start = tokens.index(meta.aliases[g])
    return Sentence(sid, tokens, [Mention(start, start + 1, key)]), "memorization"


def _aff_sentence(meta, rng, sid, unseen_gold: bool):
    if unseen_gold:
        g, j = _pick_unseen(meta, rng)
    else:
        g = int(rng.integers(meta.n_groups))
        j = _weighted_member(rng, _trained_members(meta, g, typed_only=True), STRUCT_WEIGHTS)
    key = meta.keys[g][j]
    cues = list(meta.aff_tokens(meta.types[g][j]))
    picked = [cues[int(i)] for i in rng.choice(3, size=int(rng.integers(1, 3)), replace=False)]
    tokens = _fillers(rng) + [meta.aliases[g]] + picked + _fillers(rng)
    start = tokens.index(meta.aliases[g])
    return Sentence(sid, tokens, [Mention(start, start + 1, key)]), "affordance"


def _kg_sentence(meta, rng, sid, unseen_gold: bool):
    if unseen_gold:
        g, j = _pick_unseen(meta, rng)
    else:
        g = int(rng.integers(meta.n_groups))
        j = _weighted_member(rng, _trained_members(meta, g, typed_only=True), STRUCT_WEIGHTS)
    key = meta.keys[g][j]
    p = meta.partners[g][j]
    anchor_key = meta.keys[p][0]
    rel_cue = meta.rel_tokens(meta.rel_ids[g][j])[int(rng.integers(2))]
    tokens = (_fillers(rng) + [meta.aliases[p], meta.mem_token(anchor_key), rel_cue]
              + _fillers(rng) + [meta.aliases[g]] + _fillers(rng))
    a_start = tokens.index(meta.aliases[p])
    t_start = tokens.index(meta.aliases[g])
    mentions = [Mention(a_start, a_start + 1, anchor_key),
                Mention(t_start, t_start + 1, key)]
    mentions.sort(key=lambda m: m.start)
    return Sentence(sid, tokens, mentions), "kg"


def _pick_unseen(meta: SynMeta, rng):
    pool = sorted(meta.unseen)
    g, j = pool[int(rng.integers(len(pool)))]
    return g, j


def _cons_triple(meta: SynMeta, rng, unseen_gold: bool):
    """Three (group, member) picks of one shared type; every pair of chosen
    groups shares exactly that type, so the common type is unambiguous.

    Seeds the first pick at random, then searches the (small) set of
    compatible groups exhaustively, so a valid triple is found whenever one
    exists rather than left to rejection-sampling luck."""
    for _ in range(200):
        if unseen_gold:
            g1, j1 = _pick_unseen(meta, rng)
            tau = meta.types[g1][j1]
        else:
            tau = int(rng.integers(meta.params.n_types))
            trained = [(g, j) for g, j in meta.members_by_type.get(tau, [])
                       if meta.is_trained_member(g, j)]
            if not trained:
                continue
            g1, j1 = trained[int(rng.integers(len(trained)))]
        set1 = meta.type_set(g1)
        compatible = [(g, j) for g, j in meta.members_by_type[tau]
                      if g != g1 and meta.is_trained_member(g, j)
                      and set1 & meta.type_set(g) == {tau}]
        order = list(rng.permutation(len(compatible)))
        for a in range(len(order)):
            g2, j2 = compatible[order[a]]
            for b in range(a + 1, len(order)):
                g3, j3 = compatible[order[b]]
                if g2 == g3:
                    continue
                if meta.type_set(g2) & meta.type_set(g3) == {tau}:
                    picks = [(g1, j1), (g2, j2), (g3, j3)]
                    perm = rng.permutation(3)
                    return [picks[int(i)] for i in perm]
    raise ValueError("could not build a consistency triple with a unique shared type")


def _cons_sentence(meta, rng, sid, unseen_gold: bool):
    picks = _cons_triple(meta, rng, unseen_gold)
    tokens = list(_fillers(rng, 0, 2))
    mentions = []
    for idx, (g, j) in enumerate(picks):
        if idx:
            tokens.append(LIST_CUES[int(rng.integers(len(LIST_CUES)))])
        mentions.append(Mention(len(tokens), len(tokens) + 1, meta.keys[g][j]))
        tokens.append(meta.aliases[g])
    tokens.extend(_fillers(rng, 0, 2))
    return Sentence(sid, tokens, mentions), "consistency"


# ---------------------------------------------------------------------------
# rule-based oracle (the generator's correctness gate)


def rule_oracle(sentence: Sentence, meta: SynMeta) -> list[str]:
    """Resolve every mention from planted cues alone; raises if a sentence
    does not decode cleanly (generation is then buggy)."""
    tokens = sentence.tokens
    mentions = sorted(sentence.mentions, key=lambda m: m.start)
    groups = [meta.group_of_alias[tokens[m.start]] for m in mentions]
    k = meta.params.k_ambiguity

    rel_present = any(t.startswith("rel") and "_" in t for t in tokens)
    cons_present = any(t in LIST_CUES for t in tokens)
    aff_present = any(t.startswith("aff") for t in tokens)

    if rel_present:
        if len(mentions) != 2:
            raise ValueError(f"{sentence.sentence_id}: kg sentence without two mentions")
        for a, b in ((0, 1), (1, 0)):
            ga, gb = groups[a], groups[b]
            hits = [j for j in range(1, k) if meta.partners[gb][j] == ga]
            if len(hits) == 1:
                out = [None, None]
                out[a] = meta.keys[ga][0]
                out[b] = meta.keys[gb][hits[0]]
                return out
        raise ValueError(f"{sentence.sentence_id}: kg adjacency did not decode uniquely")

    if cons_present:
        common = meta.type_set(groups[0])
        for g in groups[1:]:
            common &= meta.type_set(g)
        if len(common) != 1:
            raise ValueError(f"{sentence.sentence_id}: consistency type not unique")
        tau = common.pop()
        return [meta.keys[g][meta.types[g].index(tau)] for g in groups]

    if aff_present:
        cue = next(t for t in tokens if t.startswith("aff"))
        tau = int(cue[3 : cue.index("_")])
        (g,) = groups
        return [meta.keys[g][meta.types[g].index(tau)]]

    cue = next(t for t in tokens if t.startswith("mem_"))
    key = cue[len("mem_"):]
    (g,) = groups
    if key not in meta.keys[g]:
        raise ValueError(f"{sentence.sentence_id}: memorization cue names a foreign entity")
    return [key]


# ---------------------------------------------------------------------------
# corpus generation


PATTERNS = ("memorization", "affordance", "kg", "consistency")


def _build_split(meta: SynMeta, rng, name: str, n: int, unseen_share: float):
    counts = apportion(n, meta.params.pattern_mix)
    schedule = [p for p, c in zip(PATTERNS, counts) for _ in range(c)]
    rng.shuffle(schedule)
    sentences, patterns = [], []
    for i, pattern in enumerate(schedule):
        sid = f"{name}-{i:05d}"
        unseen_gold = (pattern != "memorization" and unseen_share > 0
                       and rng.random() < unseen_share)
        if pattern == "memorization":
            s, p = _mem_sentence(meta, rng, sid)
        elif pattern == "affordance":
            s, p = _aff_sentence(meta, rng, sid, unseen_gold)
        elif pattern == "kg":
            s, p = _kg_sentence(meta, rng, sid, unseen_gold)
        else:
            s, p = _cons_sentence(meta, rng, sid, unseen_gold)
        sentences.append(s)
        patterns.append(p)
    return sentences, patterns


def generate_corpus(meta: SynMeta, kb: StructuredKB, out_dir):
    """Write train/dev/test corpora plus the answer key; gate on the rule
    oracle and the never-train-unseen invariant."""
    params = meta.params
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    streams = RngStreams(params.seed)
    n_dev = int(round(params.dev_fraction * params.n_sentences))
    n_test = int(round(params.test_fraction * params.n_sentences))
    n_train = params.n_sentences - n_dev - n_test

    splits = {}
    answers = []
    for name, n, unseen_share in (("train", n_train, 0.0),
                                  ("dev", n_dev, 0.0),
                                  ("test", n_test, params.test_unseen_share)):
        sentences, patterns = _build_split(meta, streams.stream(f"split:{name}"),
                                           name, n, unseen_share)
        for s, p in zip(sentences, patterns):
            decoded = rule_oracle(s, meta)
            actual = [m.gold for m in sorted(s.mentions, key=lambda m: m.start)]
            if decoded != actual:
                raise AssertionError(f"oracle mismatch on {s.sentence_id}: {decoded} != {actual}")
            answers.append((s.sentence_id, p, ",".join(actual)))
        splits[name] = sentences

    unseen_keys = {meta.keys[g][j] for g, j in meta.unseen}
    for s in splits["train"]:
        for m in s.mentions:
            if m.gold in unseen_keys:
                raise AssertionError(f"unseen entity {m.gold} used as train gold in {s.sentence_id}")

    for name, sentences in splits.items():
        save_corpus(sentences, out_dir / f"{name}.jsonl")
    with open(out_dir / "answers.tsv", "w", encoding="utf-8") as fh:
        for sid, pattern, golds in answers:
            fh.write(f"{sid}\t{pattern}\t{golds}\n")

    with open(out_dir / "gen_manifest.txt", "w", encoding="utf-8") as fh:
        fh.write("synthetic corpus manifest\n")
        fh.write(f"seed={params.seed}\n")
        fh.write(f"entities={params.n_entities} groups={meta.n_groups} "
                 f"k_ambiguity={params.k_ambiguity}\n")
        fh.write(f"sentences: train={n_train} dev={n_dev} test={n_test}\n")
        fh.write(f"pattern_mix={params.pattern_mix} (memorization, affordance, kg, consistency)\n")
        fh.write(f"unseen entities={len(meta.unseen)} (never gold in train)\n")
        fh.write("cue vocabularies (disjoint by prefix):\n")
        fh.write("  memorization: mem_<entity key>\n")
        fh.write("  affordance:   aff<type>_{a,b,c}\n")
        fh.write("  kg relation:  rel<rid>_{a,b}\n")
        fh.write(f"  consistency:  {', '.join(LIST_CUES)}\n")
        fh.write(f"  filler:       w0..w{N_FILLERS - 1}\n")
        fh.write("oracle gate: 100% on all splits\n")
    return splits


def generate(params: GenParams, out_dir):
    """KB plus corpus in one call; returns (meta, kb, splits)."""
    meta, kb = generate_kb(params, out_dir)
    splits = generate_corpus(meta, kb, out_dir)
    return meta, kb, splits


def load_answer_key(path) -> dict[str, tuple[str, list[str]]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"{path}:{lineno}: expected `sentence_id<TAB>pattern<TAB>gold_keys`")
            out[parts[0]] = (parts[1], parts[2].split(","))
    return out
