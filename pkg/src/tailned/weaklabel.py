"""Weak labeling: densify training labels with two page-level heuristics.

On a sentence from an entity's page, (1) pronouns matching the gender
recorded for a person page are labeled with the page entity, and (2) the
page's own alternative names found in the sentence are labeled with the
page entity. New labels are flagged weak=true, never overlap existing
labels, and a second application adds nothing.
"""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Mention, Sentence

MALE_PRONOUNS = frozenset({"he", "him", "his"})
FEMALE_PRONOUNS = frozenset({"she", "her", "hers"})


def _is_person(page_entity_id: int | None, kb, person_coarse_id: int | None) -> bool:
    if page_entity_id is None or person_coarse_id is None:
        return True  # no coarse typing available: trust the gender field
    return kb.coarse_type_of[page_entity_id] == person_coarse_id


def pronoun_label(sentence: Sentence, kb=None, person_coarse_id: int | None = None) -> list[Mention]:
    """Single-token weak mentions over gender-matched pronouns.

    Applies only to sentences from a page with a known gender (gender is
    only recorded for person pages); ambiguous or absent gender skips the
    sentence entirely.
    """
    if sentence.page_entity is None or sentence.page_gender not in ("male", "female"):
        return []
    if kb is not None:
        eid = kb.entity_ids.get(sentence.page_entity)
        if eid is not None and not _is_person(eid, kb, person_coarse_id):
            return []
    lexicon = MALE_PRONOUNS if sentence.page_gender == "male" else FEMALE_PRONOUNS
    existing = list(sentence.mentions)
    new = []
    for i, token in enumerate(sentence.tokens):
        if token.lower() not in lexicon:
            continue
        span = Mention(i, i + 1, sentence.page_entity, weak=True)
        if any(span.overlaps(m) for m in existing) or any(span.overlaps(m) for m in new):
            continue
        new.append(span)
    return new


def alias_label(sentence: Sentence, kb=None) -> list[Mention]:
    """Weak mentions over the page's own aliases, longest first,
    case-insensitive on token boundaries, skipping occupied spans."""
    if sentence.page_entity is None or not sentence.page_aliases:
        return []
    alias_tokens = sorted(
        {tuple(a.lower().split()) for a in sentence.page_aliases if a.strip()},
        key=lambda t: (-len(t), t))
    lowered = [t.lower() for t in sentence.tokens]
    existing = list(sentence.mentions)
    new = []
    for alias in alias_tokens:
        length = len(alias)
        for start in range(0, len(lowered) - length + 1):
            if tuple(lowered[start : start + length]) != alias:
                continue
            span = Mention(start, start + length, sentence.page_entity, weak=True)
            if any(span.overlaps(m) for m in existing) or any(span.overlaps(m) for m in new):
                continue
            new.append(span)
    return new


@dataclass
class WeakLabelStats:
    mentions_before: int
    mentions_after: int
    pronoun_added: int
    alias_added: int

    @property
    def ratio(self) -> float:
        if self.mentions_before == 0:
            return 1.0
        return self.mentions_after / self.mentions_before


def weak_label_corpus(corpus, kb=None, person_coarse_id: int | None = None):
    """Apply both heuristics to every sentence in place; returns
    (corpus, stats). Sentences without page metadata pass through unchanged,
    and re-application is a no-op (new spans always collide with the ones
    already added)."""
    before = sum(len(s.mentions) for s in corpus)
    pron_added = alias_added = 0
    for sentence in corpus:
        pron = pronoun_label(sentence, kb, person_coarse_id)
        sentence.mentions.extend(pron)
        pron_added += len(pron)
        alias = alias_label(sentence, kb)
        sentence.mentions.extend(alias)
        alias_added += len(alias)
        sentence.mentions.sort(key=lambda m: (m.start, m.end))
    after = sum(len(s.mentions) for s in corpus)
    return corpus, WeakLabelStats(before, after, pron_added, alias_added)
