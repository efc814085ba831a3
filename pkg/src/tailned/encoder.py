"""Contextual word matrix W: trainable token embeddings plus sinusoidal
positional encodings, with an optional small self-attention stack.

This is a trainable stand-in for a frozen pretrained encoder; everything
the disambiguation machinery tests lives downstream of W.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionBlock, mha

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"


@dataclass
class Vocab:
    token_to_id: dict[str, int] = field(default_factory=dict)

    def __post_init__(self):
        if not self.token_to_id:
            self.token_to_id = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        if self.token_to_id.get(PAD_TOKEN) != PAD or self.token_to_id.get(UNK_TOKEN) != UNK:
            raise ValueError("vocab must map <pad> to 0 and <unk> to 1")

    def __len__(self):
        return len(self.token_to_id)

    def encode(self, tokens) -> np.ndarray:
        return np.array([self.token_to_id.get(t.lower(), UNK) for t in tokens], dtype=np.intp)


def build_vocab(sentences) -> Vocab:
    """Lowercased whitespace-token vocab over a corpus, min frequency 1.

    Ids are dense: specials first, then tokens sorted lexicographically so a
    rebuilt vocab always indexes identically.
    """
    seen = set()
    for s in sentences:
        for t in s.tokens:
            seen.add(t.lower())
    mapping = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
    for t in sorted(seen):
        if t not in mapping:
            mapping[t] = len(mapping)
    return Vocab(mapping)


def save_vocab(vocab: Vocab, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(vocab_text(vocab))


def vocab_text(vocab: Vocab) -> str:
    rows = sorted(vocab.token_to_id.items(), key=lambda kv: kv[1])
    return "".join(f"{tok}\t{i}\n" for tok, i in rows)


def load_vocab(path) -> Vocab:
    with open(path, encoding="utf-8") as fh:
        return parse_vocab(fh.read(), source=str(path))


def parse_vocab(text: str, source: str = "<vocab>") -> Vocab:
    mapping = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line:
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise ValueError(f"{source}:{lineno}: expected `token<TAB>id`")
        mapping[parts[0]] = int(parts[1])
    return Vocab(mapping)


def sinusoidal_pe(position: int, dim: int) -> np.ndarray:
    """pe[2i] = sin(pos / 10000^(2i/dim)), pe[2i+1] = cos(same)."""
    if dim % 2 != 0:
        raise ValueError(f"positional encoding dim must be even, got {dim}")
    i = np.arange(dim // 2)
    angle = position / np.power(10000.0, 2.0 * i / dim)
    pe = np.empty(dim)
    pe[0::2] = np.sin(angle)
    pe[1::2] = np.cos(angle)
    return pe


def pe_matrix(n: int, dim: int) -> np.ndarray:
    """Rows 0..n-1 of the sinusoidal encoding."""
    return np.stack([sinusoidal_pe(p, dim) for p in range(n)])


def init_token_table(rng, vocab_size: int, h: int):
    return ad.parameter(rng.normal(scale=math.sqrt(1.0 / h), size=(vocab_size, h)))


def encode_sentence(tokens, vocab: Vocab, token_table, enc_blocks=(),
                    max_sentence_len: int = 100,
                    dropout_p: float = 0.0, rng=None, train: bool = False):
    """W[i] = token_embedding[id_i] + sinusoidal_pe(i, H), then optional
    self-attention blocks over the tokens."""
    if len(tokens) > max_sentence_len:
        raise ValueError(f"sentence of {len(tokens)} tokens exceeds max length {max_sentence_len}")
    if isinstance(tokens, np.ndarray):
        ids = tokens.astype(np.intp, copy=False)
    elif tokens and isinstance(tokens[0], str):
        ids = vocab.encode(tokens)
    else:
        ids = np.asarray(tokens, dtype=np.intp)
    n = len(ids)
    h = token_table.shape[1]
    w = ad.add(ad.take_rows(token_table, ids), pe_matrix(n, h))
    for block in enc_blocks:
        w = mha(w, w, block, dropout_p=dropout_p, rng=rng, train=train)
    return w


def init_encoder_blocks(rng, h: int, heads: int, n_layers: int) -> list[AttentionBlock]:
    if n_layers not in (0, 1, 2):
        raise ValueError(f"encoder_layers must be 0, 1 or 2, got {n_layers}")
    return [AttentionBlock.init(rng, h, heads) for _ in range(n_layers)]
