"""Candidate-mixing attention: word attention, candidate self-attention,
KG neighbor mixing, the layer stack, and the max-ensemble scorer.

Candidates are handled flattened to (M*K, H) throughout; reshaping to the
(M, K) mention grid happens only at scoring time. Padded key positions are
excluded from softmaxes with a large finite penalty (-1e9) rather than -inf
so every intermediate stays finite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

NEG = -1e9  # additive masking sentinel; finite by design


@dataclass
class AttentionBlock:
    """One multi-head attention block: projections, feedforward, layer norms."""

    heads: int
    wq: Tensor
    bq: Tensor
    wk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor
    ff1: Tensor
    ffb1: Tensor
    ff2: Tensor
    ffb2: Tensor
    ln1_g: Tensor
    ln2_g: Tensor

    @classmethod
    def init(cls, rng, h: int, heads: int) -> "AttentionBlock":
        if h % heads != 0:
            raise ValueError(f"hidden dim {h} not divisible by {heads} heads")
        scale = math.sqrt(1.0 / h)

        def w():
            return ad.parameter(rng.normal(scale=scale, size=(h, h)))

        def b():
            return ad.parameter(np.zeros(h))

        return cls(
            heads=heads,
            wq=w(), bq=b(), wk=w(), wv=w(), bv=b(), wo=w(), bo=b(),
            ff1=w(), ffb1=b(), ff2=w(), ffb2=b(),
            ln1_g=ad.parameter(np.ones(h)), ln2_g=ad.parameter(np.ones(h)),
        )

    # layer norms are gain-only: candidates are scored by dotting each row
    # against one shared vector, so a learned additive output shift moves
    # every candidate's score equally and can never change the prediction
    _FIELDS = ("wq", "bq", "wk", "wv", "bv", "wo", "bo",
               "ff1", "ffb1", "ff2", "ffb2", "ln1_g", "ln2_g")

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.{name}": getattr(self, name) for name in self._FIELDS}

    @classmethod
    def from_params(cls, prefix: str, params: dict[str, Tensor], heads: int) -> "AttentionBlock":
        return cls(heads=heads, **{name: params[f"{prefix}.{name}"] for name in cls._FIELDS})


@dataclass
class LayerOutput:
    e_prime: Tensor  # (M*K, H)
    e_k_list: list[Tensor]  # one per adjacency, same shape
    e_k_avg: Tensor  # elementwise mean of e_k_list, or e_prime when empty


def mha(queries_src, keyval_src, block: AttentionBlock, key_mask=None,
        dropout_p: float = 0.0, rng=None, train: bool = False) -> Tensor:
    """Multi-head attention with residual skips, a feedforward sublayer
    (dropout inside), and norm-last layer norms.

    key_mask, when given, is a (n_keys,) array of {0,1}; masked keys get a
    -1e9 additive penalty before the softmax.
    """
    h = queries_src.shape[-1]
    heads = block.heads
    if h % heads != 0:
        raise ValueError(f"hidden dim {h} not divisible by {heads} heads")
    dh = h // heads
    nq = queries_src.shape[0]
    nk = keyval_src.shape[0]

    q = ad.matmul(queries_src, block.wq) + block.bq
    # no key bias: a shared offset on every key shifts each score row by a
    # constant and cancels in the softmax, so the parameter is unidentifiable
    k = ad.matmul(keyval_src, block.wk)
    v = ad.matmul(keyval_src, block.wv) + block.bv

    qh = ad.permute(ad.reshape(q, (nq, heads, dh)), (1, 0, 2))  # (heads, nq, dh)
    kh = ad.permute(ad.reshape(k, (nk, heads, dh)), (1, 2, 0))  # (heads, dh, nk)
    vh = ad.permute(ad.reshape(v, (nk, heads, dh)), (1, 0, 2))  # (heads, nk, dh)

    scores = ad.mul(ad.bmm(qh, kh), 1.0 / math.sqrt(dh))  # (heads, nq, nk)
    if key_mask is not None:
        penalty = (1.0 - np.asarray(key_mask, dtype=np.float64)) * NEG
        scores = ad.add(scores, penalty)  # broadcasts over (heads, nq, ·)
    attn = ad.rowwise_softmax(scores)
    mixed = ad.bmm(attn, vh)  # (heads, nq, dh)
    merged = ad.reshape(ad.permute(mixed, (1, 0, 2)), (nq, h))
    out = ad.matmul(merged, block.wo) + block.bo

    x1 = ad.layer_norm(ad.add(queries_src, out), block.ln1_g)
    ff = ad.matmul(ad.relu(ad.matmul(x1, block.ff1) + block.ffb1), block.ff2) + block.ffb2
    if train and dropout_p > 0.0:
        ff = ad.dropout(ff, dropout_p, rng, train)
    return ad.layer_norm(ad.add(x1, ff), block.ln2_g)


def phrase2ent(e, w, block, word_mask=None, **kw) -> Tensor:
    """Candidates attend over sentence words."""
    return mha(e, w, block, key_mask=word_mask, **kw)


def ent2ent(e, block, cand_mask=None, **kw) -> Tensor:
    """Candidates attend over all candidates (self-attention); padded
    candidates are masked as keys."""
    return mha(e, e, block, key_mask=cand_mask, **kw)


def kg2ent(e_prime, adjacency_slice, w) -> Tensor:
    """Mix each candidate with its KG-adjacent candidates:
    softmax(K + w*I) @ E' + E'.

    adjacency_slice is a constant (n, n) array of adjacency weights between
    the candidates present (within-mention pairs already zeroed); w is a
    learned scalar Tensor of shape (1,).
    """
    n = e_prime.shape[0]
    adj = np.asarray(adjacency_slice, dtype=np.float64)
    if adj.shape != (n, n):
        raise ValueError(f"adjacency slice shape {adj.shape} does not match {n} candidates")
    logits = ad.add(ad.mul(ad.constant(np.eye(n)), w), adj)
    mixing = ad.rowwise_softmax(logits)  # rows sum to 1
    return ad.add(ad.matmul(mixing, e_prime), e_prime)


def layer_forward(e, w_mat, p2e_block, e2e_block, adj_slices, w_params,
                  word_mask=None, cand_mask=None,
                  dropout_p: float = 0.0, rng=None, train: bool = False) -> LayerOutput:
    """One reasoning layer: E' = Phrase2Ent + Ent2Ent, then one KG2Ent output
    per adjacency; the average feeds the next layer."""
    if len(adj_slices) != len(w_params):
        raise ValueError("one w parameter required per adjacency")
    kw = dict(dropout_p=dropout_p, rng=rng, train=train)
    e_p = phrase2ent(e, w_mat, p2e_block, word_mask=word_mask, **kw)
    e_c = ent2ent(e, e2e_block, cand_mask=cand_mask, **kw)
    e_prime = ad.add(e_p, e_c)
    e_k_list = [kg2ent(e_prime, adj, w) for adj, w in zip(adj_slices, w_params)]
    if e_k_list:
        acc = e_k_list[0]
        for t in e_k_list[1:]:
            acc = ad.add(acc, t)
        e_k_avg = ad.mul(acc, 1.0 / len(e_k_list))
    else:
        e_k_avg = e_prime
    return LayerOutput(e_prime=e_prime, e_k_list=e_k_list, e_k_avg=e_k_avg)


def score(final: LayerOutput, v, m: int, k: int, cand_mask=None) -> Tensor:
    """Disambiguation scores: elementwise max over the E' projection and
    every E_k projection, reshaped to (M, K); padded slots forced to -1e9."""
    if v.shape[0] != final.e_prime.shape[-1]:
        raise ValueError(f"score vector length {v.shape[0]} != hidden dim {final.e_prime.shape[-1]}")
    s = ad.matmul(final.e_prime, v)  # (M*K, 1)
    for e_k in final.e_k_list:
        s = ad.maximum(s, ad.matmul(e_k, v))
    s = ad.reshape(s, (m, k))
    if cand_mask is not None:
        mask = np.asarray(cand_mask, dtype=np.float64).reshape(m, k)
        s = ad.add(ad.mul(s, mask), (1.0 - mask) * NEG)
    return s


def predict(s_dis, cand_mask, cand_ids) -> list[int]:
    """Highest-scoring unmasked candidate per mention; ties break to the
    lowest column index (argmax takes the first maximum)."""
    s = s_dis.data if isinstance(s_dis, Tensor) else np.asarray(s_dis, dtype=np.float64)
    mask = np.asarray(cand_mask, dtype=bool)
    ids = np.asarray(cand_ids)
    out = []
    for i in range(s.shape[0]):
        if not mask[i].any():
            raise ValueError(f"mention {i} has no unmasked candidates")
        row = np.where(mask[i], s[i], -np.inf)
        out.append(int(ids[i, int(np.argmax(row))]))
    return out
