"""Sentence records: tokens, mention spans, gold labels, page metadata.

Corpora are stored one JSON object per line. Mention spans are token
offsets [start, end). Gold labels are external entity keys (strings);
dense ids only exist inside a loaded KB.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field


@dataclass
class Mention:
    start: int
    end: int  # exclusive
    gold: str  # external entity key
    weak: bool = False

    def overlaps(self, other: "Mention") -> bool:
        return self.start < other.end and other.start < self.end


@dataclass
class Sentence:
    sentence_id: str
    tokens: list[str]
    mentions: list[Mention] = field(default_factory=list)
    # Page metadata, present when the sentence came from an entity page.
    page_entity: str | None = None
    page_gender: str | None = None  # "male" | "female" | None
    page_aliases: list[str] = field(default_factory=list)

    def to_json(self) -> str:
        rec = {
            "sentence_id": self.sentence_id,
            "tokens": self.tokens,
            "mentions": [
                {"start": m.start, "end": m.end, "gold": m.gold, "weak": m.weak}
                for m in self.mentions
            ],
        }
        if self.page_entity is not None:
            rec["page_entity"] = self.page_entity
        if self.page_gender is not None:
            rec["page_gender"] = self.page_gender
        if self.page_aliases:
            rec["page_aliases"] = self.page_aliases
        return json.dumps(rec, ensure_ascii=False, sort_keys=True)

    @staticmethod
    def from_json(line: str) -> "Sentence":
        rec = json.loads(line)
        return Sentence(
            sentence_id=rec["sentence_id"],
            tokens=list(rec["tokens"]),
            mentions=[
                Mention(int(m["start"]), int(m["end"]), m["gold"], bool(m.get("weak", False)))
                for m in rec["mentions"]
            ],
            page_entity=rec.get("page_entity"),
            page_gender=rec.get("page_gender"),
            page_aliases=list(rec.get("page_aliases", [])),
        )

    def mention_text(self, m: Mention) -> str:
        return " ".join(self.tokens[m.start : m.end])


def load_corpus(path) -> list[Sentence]:
    sentences = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                sentences.append(Sentence.from_json(line))
            except (KeyError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed sentence record: {exc}") from exc
    return sentences


def save_corpus(sentences, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in sentences:
            fh.write(s.to_json() + "\n")
