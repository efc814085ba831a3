"""Label densification with page-level heuristics.

Entity pages label their subject sparsely: the first mention is anchored,
later pronoun and alias references are bare text. Two heuristics recover
them, pronoun linking (gendered pronouns on a gendered subject's page)
and alias matching (known aliases of the page entity), and every added
label is flagged weak so evaluation can ignore it.
"""

from tailned.corpus import Mention, Sentence
from tailned.weaklabel import weak_label_corpus

corpus = [
    Sentence(
        sentence_id="page-ada-1",
        tokens="Ada Lovelace wrote the first program and she annotated it".split(),
        mentions=[Mention(0, 2, "Q_ADA")],
        page_entity="Q_ADA", page_gender="female",
        page_aliases=["countess of lovelace", "lovelace"],
    ),
    Sentence(
        sentence_id="page-ada-2",
        tokens="Her notes made Lovelace famous beyond her circle".split(),
        mentions=[],
        page_entity="Q_ADA", page_gender="female",
        page_aliases=["countess of lovelace", "lovelace"],
    ),
    Sentence(
        sentence_id="news-1",
        tokens="The engine described by lovelace never ran".split(),
        mentions=[],
    ),
]

before = sum(len(s.mentions) for s in corpus)
_, stats = weak_label_corpus(corpus, kb=None)

print(f"mentions before: {stats.mentions_before}")
print(f"mentions after : {stats.mentions_after}")
print(f"densification  : {stats.ratio:.2f}x")
print()
for s in corpus:
    print(s.sentence_id)
    for m in s.mentions:
        tag = "weak" if m.weak else "anchor"
        print(f"  [{tag:>6}] {s.mention_text(m)!r} -> {m.gold}")
print()
print("Note the news sentence stays untouched: without page metadata the")
print("heuristics have no subject to attribute pronouns or aliases to.")

# running the labeler again adds nothing, every span is already claimed
_, again = weak_label_corpus(corpus, kb=None)
assert again.mentions_after == stats.mentions_after
print("second pass adds nothing (idempotent).")
