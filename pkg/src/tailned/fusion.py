"""Per-candidate entity payloads: fuse entity, type, and relation embeddings
through an MLP, with the type-prediction head and mention positional offsets.

Single-candidate operations mirror the batched grid versions used in the
model forward; both share one code path so the contracts tested on single
entities hold for the vectorized training route.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .attention import NEG
from .encoder import sinusoidal_pe


@dataclass
class EmbeddingTables:
    """All fusion-side parameters.

    Entity rows all start at one identical vector (the zero vector) so no
    entity is distinguishable before training; rare entities that never get
    gold gradient stay near that shared starting point. NO-TYPE, NO-RELATION
    and the NULL padding candidate are dedicated learned rows kept outside
    the main tables.
    """

    entity: Tensor  # (n_rows, D_u); compression may shrink n_rows below |E|
    null_entity: Tensor  # (1, D_u) padding-candidate embedding
    type_table: Tensor  # (|T_vocab|, D_t)
    no_type: Tensor  # (1, D_t)
    relation_table: Tensor  # (|R_vocab|, D_r)
    no_relation: Tensor  # (1, D_r)
    coarse: Tensor  # (C, D_c)
    type_attn_w: Tensor  # (D_t, D_t) additive-attention params for types
    type_attn_b: Tensor
    type_attn_a: Tensor  # (D_t, 1)
    rel_attn_w: Tensor
    rel_attn_b: Tensor
    rel_attn_a: Tensor
    fusion_w1: Tensor  # (D_u + D_t + D_c + D_r, H)
    fusion_b1: Tensor
    fusion_w2: Tensor  # (H, H)
    fusion_b2: Tensor
    typepred_w1: Tensor  # (H, D_c)
    typepred_b1: Tensor
    typepred_w2: Tensor  # (D_c, C)
    typepred_b2: Tensor
    pe_proj_w: Tensor  # (2H, H)
    pe_proj_b: Tensor
    entity_row_map: np.ndarray  # dense entity id -> row of `entity`

    _FIELDS = (
        "entity", "null_entity", "type_table", "no_type", "relation_table",
        "no_relation", "coarse", "type_attn_w", "type_attn_b", "type_attn_a",
        "rel_attn_w", "rel_attn_b", "rel_attn_a", "fusion_w1", "fusion_b1",
        "fusion_w2", "fusion_b2", "typepred_w1", "typepred_b1", "typepred_w2",
        "typepred_b2", "pe_proj_w", "pe_proj_b",
    )

    def params(self) -> dict[str, Tensor]:
        return {name: getattr(self, name) for name in self._FIELDS}

    @classmethod
    def from_params(cls, params: dict[str, Tensor], entity_row_map) -> "EmbeddingTables":
        kw = {name: params[name] for name in cls._FIELDS}
        return cls(entity_row_map=np.asarray(entity_row_map, dtype=np.intp), **kw)

    @property
    def no_type_index(self) -> int:
        return self.type_table.shape[0]

    @property
    def no_relation_index(self) -> int:
        return self.relation_table.shape[0]

    @property
    def null_entity_row(self) -> int:
        return self.entity.shape[0]

    def type_lookup(self) -> Tensor:
        return ad.concat([self.type_table, self.no_type], axis=0)

    def relation_lookup(self) -> Tensor:
        return ad.concat([self.relation_table, self.no_relation], axis=0)

    def entity_lookup(self) -> Tensor:
        return ad.concat([self.entity, self.null_entity], axis=0)


def init_tables(rng, n_entities: int, type_vocab: int, relation_vocab: int,
                h: int, d_u: int, d_t: int, d_r: int, d_c: int, c: int) -> EmbeddingTables:
    def table(rows, dim):
        return ad.parameter(rng.normal(scale=math.sqrt(1.0 / dim), size=(rows, dim)))

    def linear(din, dout):
        return ad.parameter(rng.normal(scale=math.sqrt(1.0 / din), size=(din, dout)))

    d_in = d_u + d_t + d_c + d_r
    return EmbeddingTables(
        entity=ad.parameter(np.zeros((n_entities, d_u))),  # all rows the same vector
        null_entity=ad.parameter(np.zeros((1, d_u))),
        type_table=table(max(type_vocab, 1), d_t),
        no_type=table(1, d_t),
        relation_table=table(max(relation_vocab, 1), d_r),
        no_relation=table(1, d_r),
        coarse=table(c, d_c),
        type_attn_w=linear(d_t, d_t), type_attn_b=ad.parameter(np.zeros(d_t)),
        type_attn_a=linear(d_t, 1),
        rel_attn_w=linear(d_r, d_r), rel_attn_b=ad.parameter(np.zeros(d_r)),
        rel_attn_a=linear(d_r, 1),
        fusion_w1=linear(d_in, h), fusion_b1=ad.parameter(np.zeros(h)),
        fusion_w2=linear(h, h), fusion_b2=ad.parameter(np.zeros(h)),
        typepred_w1=linear(h, d_c), typepred_b1=ad.parameter(np.zeros(d_c)),
        typepred_w2=linear(d_c, c), typepred_b2=ad.parameter(np.zeros(c)),
        pe_proj_w=linear(2 * h, h), pe_proj_b=ad.parameter(np.zeros(h)),
        entity_row_map=np.arange(n_entities, dtype=np.intp),
    )


# ---------------------------------------------------------------------------
# additive attention


def batched_add_attn(x: Tensor, mask, wa, ba, a) -> Tensor:
    """Additive attention over axis 1 of a (B, T, d) stack.

    scores s_i = a . tanh(Wa x_i + ba); masked slots get -1e9; the output is
    the softmax-weighted convex combination per batch row.
    """
    b, t, _ = x.shape
    scores = ad.matmul(ad.tanh(ad.matmul(x, wa) + ba), a)  # (B, T, 1)
    scores = ad.reshape(scores, (b, t))
    mask = np.asarray(mask, dtype=np.float64).reshape(b, t)
    if not mask.any(axis=1).all():
        raise ValueError("additive attention over an empty set")
    scores = ad.add(scores, (1.0 - mask) * NEG)
    weights = ad.rowwise_softmax(scores)  # (B, T)
    mixed = ad.bmm(ad.reshape(weights, (b, 1, t)), x)  # (B, 1, d)
    return ad.reshape(mixed, (b, x.shape[-1]))


def add_attn(vectors, wa, ba, a) -> Tensor:
    """Additive attention over a non-empty list of same-dim vectors."""
    if not vectors:
        raise ValueError("add_attn requires at least one vector")
    d = vectors[0].shape[0]
    x = ad.concat([ad.reshape(v, (1, 1, d)) for v in vectors], axis=1)  # (1, n, d)
    out = batched_add_attn(x, np.ones((1, len(vectors))), wa, ba, a)
    return ad.reshape(out, (d,))


def aggregate_grid(lookup: Tensor, id_grid, mask, wa, ba, a) -> Tensor:
    """Additive-attention pooling of embedding rows for a (B, T) id grid."""
    id_grid = np.asarray(id_grid, dtype=np.intp)
    b, t = id_grid.shape
    d = lookup.shape[1]
    rows = ad.reshape(ad.take_rows(lookup, id_grid.reshape(-1)), (b, t, d))
    return batched_add_attn(rows, mask, wa, ba, a)


def _signal_grid(ids_of, fallback_index: int, t_cap: int):
    """Pad per-entity id lists to a (B, T) grid plus mask; empty lists fall
    back to the dedicated missing-signal row."""
    width = max(1, min(t_cap, max((len(lst) for lst in ids_of), default=1)))
    grid = np.zeros((len(ids_of), width), dtype=np.intp)
    mask = np.zeros((len(ids_of), width))
    for i, lst in enumerate(ids_of):
        lst = lst[:t_cap]
        if lst:
            grid[i, : len(lst)] = lst
            mask[i, : len(lst)] = 1.0
        else:
            grid[i, 0] = fallback_index
            mask[i, 0] = 1.0
    return grid, mask


def aggregate_types(entity_id: int, kb, tables: EmbeddingTables, t_cap: int = 3) -> Tensor:
    """t_e: additive attention over the entity's assigned type embeddings;
    zero assigned types fall back to the learned NO-TYPE row."""
    grid, mask = _signal_grid([kb.types_of[entity_id]], tables.no_type_index, t_cap)
    out = aggregate_grid(tables.type_lookup(), grid, mask,
                         tables.type_attn_w, tables.type_attn_b, tables.type_attn_a)
    return ad.reshape(out, (tables.type_table.shape[1],))


def aggregate_relations(entity_id: int, kb, tables: EmbeddingTables, r_cap: int = 50) -> Tensor:
    """r_e: same contract as aggregate_types over relation embeddings."""
    grid, mask = _signal_grid([kb.relations_of[entity_id]], tables.no_relation_index, r_cap)
    out = aggregate_grid(tables.relation_lookup(), grid, mask,
                         tables.rel_attn_w, tables.rel_attn_b, tables.rel_attn_a)
    return ad.reshape(out, (tables.relation_table.shape[1],))


# ---------------------------------------------------------------------------
# mention-side heads


def mention_type_predict_batch(firsts, lasts, w_mat: Tensor, tables: EmbeddingTables):
    """For each mention span: m = W[first] + W[last]; a small MLP gives
    coarse-type logits; t_hat is the softmax-weighted coarse embedding."""
    m = ad.add(ad.take_rows(w_mat, firsts), ad.take_rows(w_mat, lasts))  # (M, H)
    hidden = ad.relu(ad.matmul(m, tables.typepred_w1) + tables.typepred_b1)
    logits = ad.matmul(hidden, tables.typepred_w2) + tables.typepred_b2  # (M, C)
    s_type = ad.rowwise_softmax(logits)
    t_hat = ad.matmul(s_type, tables.coarse)  # (M, D_c)
    return logits, s_type, t_hat


def mention_type_predict(span, w_mat: Tensor, tables: EmbeddingTables):
    """Single-span version returning (S_type (C,), t_hat (D_c,))."""
    first, end = span
    n = w_mat.shape[0]
    if not (0 <= first < end <= n):
        raise ValueError(f"span {span} invalid for sentence of {n} tokens")
    logits, s_type, t_hat = mention_type_predict_batch(
        np.array([first]), np.array([end - 1]), w_mat, tables)
    c = s_type.shape[1]
    return ad.reshape(s_type, (c,)), ad.reshape(t_hat, (t_hat.shape[1],))


def mention_position_encode_batch(firsts, lasts, h: int, tables: EmbeddingTables) -> Tensor:
    """proj([pe(first); pe(last)]): one offset per mention, added later to
    each of the mention's candidate payload rows."""
    pe = np.stack([
        np.concatenate([sinusoidal_pe(int(f), h), sinusoidal_pe(int(l), h)])
        for f, l in zip(firsts, lasts)
    ])  # (M, 2H) constant
    return ad.add(ad.matmul(ad.constant(pe), tables.pe_proj_w), tables.pe_proj_b)


def mention_position_encode(span, h: int, tables: EmbeddingTables) -> Tensor:
    first, end = span
    out = mention_position_encode_batch(np.array([first]), np.array([end - 1]), h, tables)
    return ad.reshape(out, (h,))


def payload_mlp(x: Tensor, tables: EmbeddingTables) -> Tensor:
    """MLP([u_e, t_e || t_hat_m, r_e]) -> H-dim candidate payload."""
    hidden = ad.relu(ad.matmul(x, tables.fusion_w1) + tables.fusion_b1)
    return ad.matmul(hidden, tables.fusion_w2) + tables.fusion_b2


def entity_payload(entity_id: int, t_hat_m: Tensor, mask_entity: bool,
                   kb, tables: EmbeddingTables, t_cap: int = 3, r_cap: int = 50) -> Tensor:
    """One candidate's fused payload; mask_entity zeroes u_e before the MLP."""
    u = ad.reshape(ad.take_rows(tables.entity_lookup(),
                                [tables.entity_row_map[entity_id]]),
                   (tables.entity.shape[1],))
    if mask_entity:
        u = ad.mul(u, 0.0)
    t_e = aggregate_types(entity_id, kb, tables, t_cap)
    r_e = aggregate_relations(entity_id, kb, tables, r_cap)
    x = ad.concat([u, t_e, t_hat_m, r_e], axis=0)
    return ad.reshape(payload_mlp(ad.reshape(x, (1, x.shape[0])), tables), (tables.fusion_w2.shape[1],))


@dataclass
class EntityMatrix:
    e: Tensor  # (M*K, H) payload rows, mention-major
    cand_ids: np.ndarray  # (M, K) dense entity ids, -1 on padding
    cand_mask: np.ndarray  # (M, K) floats, 0.0 = padding
    m: int
    k: int
    type_logits: Tensor | None  # (M, C) when type prediction ran


def build_E(spans, cand_ids, cand_mask, w_mat: Tensor, mask_grid,
            kb, tables: EmbeddingTables, *, t_cap: int = 3, r_cap: int = 50,
            use_entity: bool = True, use_type: bool = True, use_kg: bool = True,
            type_prediction: bool = True) -> EntityMatrix:
    """Assemble the (M*K, H) candidate payload matrix for one sentence.

    cand_ids/cand_mask are (M, K) grids (-1 and 0.0 on padding); mask_grid
    is the (M, K) boolean 2-D-masking plan (all False at evaluation).
    Padding slots draw the NULL-candidate embedding and the missing-signal
    type/relation rows. Ablation flags replace the corresponding payload
    block with constant zeros, severing gradients and influence.
    """
    cand_ids = np.asarray(cand_ids)
    m, k = cand_ids.shape
    if m == 0:
        raise ValueError("sentence has no mentions to disambiguate")
    mk = m * k
    h = w_mat.shape[1]
    flat_ids = cand_ids.reshape(-1)
    real = flat_ids >= 0
    d_u, d_t = tables.entity.shape[1], tables.type_table.shape[1]
    d_r, d_c = tables.relation_table.shape[1], tables.coarse.shape[1]

    firsts = np.array([s[0] for s in spans], dtype=np.intp)
    lasts = np.array([s[1] - 1 for s in spans], dtype=np.intp)

    type_logits = None
    if use_type and type_prediction:
        type_logits, _, t_hat = mention_type_predict_batch(firsts, lasts, w_mat, tables)
        t_hat_rows = ad.take_rows(t_hat, np.repeat(np.arange(m), k))  # (MK, D_c)
    else:
        t_hat_rows = ad.constant(np.zeros((mk, d_c)))

    if use_entity:
        rows = np.where(real, tables.entity_row_map[np.where(real, flat_ids, 0)],
                        tables.null_entity_row)
        u = ad.take_rows(tables.entity_lookup(), rows)  # (MK, D_u)
        keep = 1.0 - (np.asarray(mask_grid, dtype=np.float64).reshape(mk, 1))
        u = ad.mul(u, keep)
    else:
        u = ad.constant(np.zeros((mk, d_u)))

    if use_type:
        type_ids = [kb.types_of[i] if i >= 0 else [] for i in flat_ids]
        grid, gmask = _signal_grid(type_ids, tables.no_type_index, t_cap)
        t_e = aggregate_grid(tables.type_lookup(), grid, gmask,
                             tables.type_attn_w, tables.type_attn_b, tables.type_attn_a)
    else:
        t_e = ad.constant(np.zeros((mk, d_t)))

    if use_kg:
        rel_ids = [kb.relations_of[i] if i >= 0 else [] for i in flat_ids]
        grid, gmask = _signal_grid(rel_ids, tables.no_relation_index, r_cap)
        r_e = aggregate_grid(tables.relation_lookup(), grid, gmask,
                             tables.rel_attn_w, tables.rel_attn_b, tables.rel_attn_a)
    else:
        r_e = ad.constant(np.zeros((mk, d_r)))

    x = ad.concat([u, t_e, t_hat_rows, r_e], axis=-1)
    e = payload_mlp(x, tables)  # (MK, H)

    pe_offsets = mention_position_encode_batch(firsts, lasts, h, tables)  # (M, H)
    e = ad.add(e, ad.take_rows(pe_offsets, np.repeat(np.arange(m), k)))

    return EntityMatrix(e=e, cand_ids=cand_ids,
                        cand_mask=np.asarray(cand_mask, dtype=np.float64).reshape(m, k),
                        m=m, k=k, type_logits=type_logits)
