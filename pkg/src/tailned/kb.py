"""Knowledge base: entities, candidate maps, types, relations, adjacencies.

Dense entity ids are assigned by sorted external key at load time so a
KB rebuilt from the same files always indexes identically (checkpoints
reference dense ids). All structures are immutable after load and safe
to share read-only.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field


@dataclass
class AdjacencyMatrix:
    """Sparse symmetric non-negative weights over entity pairs, zero diagonal."""

    name: str
    n: int
    weights: dict[tuple[int, int], float] = field(default_factory=dict)

    def weight(self, i: int, j: int) -> float:
        if i == j:
            return 0.0
        key = (i, j) if i < j else (j, i)
        return self.weights.get(key, 0.0)

    def set_weight(self, i: int, j: int, w: float) -> None:
        if i == j:
            return
        if not math.isfinite(w) or w < 0:
            raise ValueError(f"adjacency weight must be finite and >= 0, got {w}")
        key = (i, j) if i < j else (j, i)
        if w == 0.0:
            self.weights.pop(key, None)
        else:
            self.weights[key] = w

    def neighbors(self, i: int):
        """Yields (j, weight) pairs with nonzero weight."""
        for (a, b), w in self.weights.items():
            if a == i:
                yield b, w
            elif b == i:
                yield a, w


@dataclass
class StructuredKB:
    entity_keys: list[str]  # dense id -> external key
    entity_ids: dict[str, int]  # external key -> dense id
    candidate_map: dict[str, list[tuple[int, int]]]  # alias -> [(entity_id, prior)]
    types_of: list[list[int]]  # per entity, <= T type ids
    relations_of: list[list[int]]  # per entity, <= R relation ids
    coarse_type_of: list[int]  # per entity, single coarse id (-1 = none)
    adjacencies: dict[str, AdjacencyMatrix]
    type_vocab_size: int
    relation_vocab_size: int
    coarse_vocab_size: int
    popularity: list[int] = field(default_factory=list)

    @property
    def n_entities(self) -> int:
        return len(self.entity_keys)

    def key_of(self, entity_id: int) -> str:
        return self.entity_keys[entity_id]

    def id_of(self, key: str) -> int:
        try:
            return self.entity_ids[key]
        except KeyError:
            raise KeyError(f"unknown entity key {key!r}") from None


def _read_tsv(path, n_fields):
    """Yields (lineno, fields) for each non-empty line, validating arity."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise ValueError(
                    f"{path}:{lineno}: expected {n_fields} tab-separated fields, got {len(fields)}"
                )
            yield lineno, fields


def load_kb(
    alias_path,
    types_path,
    relations_path,
    adjacency_paths=None,
    coarse_path=None,
    max_types=3,
    max_relations=50,
) -> StructuredKB:
    """Load and index a KB from its interchange files.

    Entity universe = every entity key appearing in aliases.tsv. Type and
    coarse rows referencing unknown entities are load errors; relation
    triples contribute a relation id to the subject (when the subject is
    known) and a KG edge only when both endpoints are known.
    """
    adjacency_paths = adjacency_paths or {}

    alias_rows = []
    entity_key_set = set()
    for lineno, (alias, key, prior) in _read_tsv(alias_path, 3):
        try:
            prior_count = int(prior)
        except ValueError:
            raise ValueError(f"{alias_path}:{lineno}: prior_count not an integer: {prior!r}")
        if prior_count < 0:
            raise ValueError(f"{alias_path}:{lineno}: negative prior_count {prior_count}")
        alias_rows.append((lineno, alias.lower(), key, prior_count))
        entity_key_set.add(key)

    entity_keys = sorted(entity_key_set)
    entity_ids = {k: i for i, k in enumerate(entity_keys)}
    n = len(entity_keys)

    candidate_map: dict[str, list[tuple[int, int]]] = defaultdict(list)
    seen_pairs = set()
    for lineno, alias, key, prior_count in alias_rows:
        eid = entity_ids[key]
        if (alias, eid) in seen_pairs:
            raise ValueError(f"{alias_path}:{lineno}: duplicate alias-entity pair ({alias!r}, {key!r})")
        seen_pairs.add((alias, eid))
        candidate_map[alias].append((eid, prior_count))
    for alias in candidate_map:
        candidate_map[alias].sort(key=lambda pair: (-pair[1], pair[0]))

    types_of: list[list[int]] = [[] for _ in range(n)]
    max_type_id = -1
    for lineno, (key, tid_str) in _read_tsv(types_path, 2):
        if key not in entity_ids:
            raise ValueError(f"{types_path}:{lineno}: unknown entity key {key!r}")
        tid = int(tid_str)
        if tid < 0:
            raise ValueError(f"{types_path}:{lineno}: negative type id {tid}")
        lst = types_of[entity_ids[key]]
        if len(lst) < max_types and tid not in lst:
            lst.append(tid)
        max_type_id = max(max_type_id, tid)

    relations_of: list[list[int]] = [[] for _ in range(n)]
    relation_edges = []
    max_rel_id = -1
    for lineno, (subj, rid_str, obj) in _read_tsv(relations_path, 3):
        rid = int(rid_str)
        if rid < 0:
            raise ValueError(f"{relations_path}:{lineno}: negative relation id {rid}")
        max_rel_id = max(max_rel_id, rid)
        if subj in entity_ids:
            lst = relations_of[entity_ids[subj]]
            if len(lst) < max_relations and rid not in lst:
                lst.append(rid)
            if obj in entity_ids:
                relation_edges.append((entity_ids[subj], entity_ids[obj]))

    coarse_type_of = [-1] * n
    max_coarse_id = -1
    if coarse_path is not None:
        for lineno, (key, cid_str) in _read_tsv(coarse_path, 2):
            if key not in entity_ids:
                raise ValueError(f"{coarse_path}:{lineno}: unknown entity key {key!r}")
            cid = int(cid_str)
            if cid < 0:
                raise ValueError(f"{coarse_path}:{lineno}: negative coarse type id {cid}")
            coarse_type_of[entity_ids[key]] = cid
            max_coarse_id = max(max_coarse_id, cid)

    adjacencies: dict[str, AdjacencyMatrix] = {}
    for name, path in adjacency_paths.items():
        adj = AdjacencyMatrix(name=name, n=n)
        for lineno, (key_a, key_b, w_str) in _read_tsv(path, 3):
            for key in (key_a, key_b):
                if key not in entity_ids:
                    raise ValueError(f"{path}:{lineno}: unknown entity key {key!r}")
            w = float(w_str)
            if not math.isfinite(w) or w < 0:
                raise ValueError(f"{path}:{lineno}: bad adjacency weight {w_str!r}")
            ia, ib = entity_ids[key_a], entity_ids[key_b]
            if ia != ib and w > 0:
                adj.set_weight(ia, ib, w)
        adjacencies[name] = adj

    if relation_edges:
        adj = AdjacencyMatrix(name="relations", n=n)
        for ia, ib in relation_edges:
            if ia != ib:
                adj.set_weight(ia, ib, 1.0)
        adjacencies.setdefault("relations", adj)

    return StructuredKB(
        entity_keys=entity_keys,
        entity_ids=entity_ids,
        candidate_map=dict(candidate_map),
        types_of=types_of,
        relations_of=relations_of,
        coarse_type_of=coarse_type_of,
        adjacencies=adjacencies,
        type_vocab_size=max_type_id + 1,
        relation_vocab_size=max_rel_id + 1,
        coarse_vocab_size=max_coarse_id + 1,
    )


def load_kb_dir(path, max_types=3, max_relations=50) -> StructuredKB:
    """Load a KB from a directory of interchange files: aliases.tsv,
    types.tsv, relations.tsv, optional coarse.tsv, plus any *.adj.tsv
    triple-list adjacency files (named after their stem) and an optional
    cooccurrence.tsv."""
    import pathlib

    d = pathlib.Path(path)
    for required in ("aliases.tsv", "types.tsv", "relations.tsv"):
        if not (d / required).exists():
            raise FileNotFoundError(f"missing KB file {d / required}")
    coarse = d / "coarse.tsv"
    adjacency_paths = {p.name[: -len(".adj.tsv")]: p for p in sorted(d.glob("*.adj.tsv"))}
    if (d / "cooccurrence.tsv").exists():
        adjacency_paths["cooccurrence"] = d / "cooccurrence.tsv"
    return load_kb(
        d / "aliases.tsv", d / "types.tsv", d / "relations.tsv",
        adjacency_paths=adjacency_paths,
        coarse_path=coarse if coarse.exists() else None,
        max_types=max_types, max_relations=max_relations,
    )


def save_adjacency(adj: AdjacencyMatrix, kb: StructuredKB, path) -> None:
    """Serialize an adjacency matrix as sorted `key<TAB>key<TAB>weight` triples."""
    rows = sorted((kb.key_of(a), kb.key_of(b), w) for (a, b), w in adj.weights.items())
    with open(path, "w", encoding="utf-8") as fh:
        for ka, kb_, w in rows:
            fh.write(f"{ka}\t{kb_}\t{w!r}\n")


def candidates(mention_text: str, kb: StructuredKB, k: int) -> list[tuple[int, int]]:
    """Top-k candidates for an alias: prior desc, entity id asc on ties."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return list(kb.candidate_map.get(mention_text.lower(), []))[:k]


def extract_mentions(tokens, kb: StructuredKB, max_ngram: int = 5):
    """Greedy longest-first alias scan returning non-overlapping spans.

    Lengths are tried from max_ngram down to 1; within a length, left to
    right. A span is accepted iff its lowercased joined text is an alias
    and it does not overlap an already-accepted span.
    """
    if not tokens:
        raise ValueError("tokens must be non-empty")
    if max_ngram < 1:
        raise ValueError(f"max_ngram must be >= 1, got {max_ngram}")
    n = len(tokens)
    claimed = [False] * n
    spans = []
    for length in range(min(max_ngram, n), 0, -1):
        for start in range(0, n - length + 1):
            end = start + length
            if any(claimed[start:end]):
                continue
            text = " ".join(tokens[start:end]).lower()
            if text in kb.candidate_map:
                spans.append((start, end))
                for i in range(start, end):
                    claimed[i] = True
    spans.sort()
    return spans


def build_cooccurrence_adjacency(corpus, kb: StructuredKB, threshold: int = 10) -> AdjacencyMatrix:
    """Sentence-level gold co-occurrence graph: weight ln(c) when c >= threshold."""
    counts: Counter[tuple[int, int]] = Counter()
    for sentence in corpus:
        golds = sorted({kb.id_of(m.gold) for m in sentence.mentions})
        for i, a in enumerate(golds):
            for b in golds[i + 1 :]:
                counts[(a, b)] += 1
    adj = AdjacencyMatrix(name="cooccurrence", n=kb.n_entities)
    for (a, b), c in counts.items():
        if c >= threshold:
            adj.set_weight(a, b, math.log(c))
    return adj


def popularity_counts(corpus, kb: StructuredKB) -> list[int]:
    """Gold-label occurrence counts per entity (anchor and weak both count)."""
    counts = [0] * kb.n_entities
    for sentence in corpus:
        for m in sentence.mentions:
            counts[kb.id_of(m.gold)] += 1
    return counts
