"""Full disambiguation model: sentence preparation, parameter state, the
stacked forward pass, and prediction.

A prepared sentence carries integer grids only; the forward pass turns them
into one tape. Candidates are mention-major flattened (M*K rows), matching
the attention module's convention.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import kb as kbmod
from .attention import AttentionBlock, layer_forward, predict, score
from .autodiff import Tensor
from .config import TrainConfig
from .encoder import Vocab, encode_sentence, init_encoder_blocks, init_token_table
from .fusion import EmbeddingTables, build_E, init_tables
from .rng import RngStreams


@dataclass
class PreparedSentence:
    sentence_id: str
    token_ids: np.ndarray  # (N,)
    spans: list[tuple[int, int]]  # M spans, token offsets [start, end)
    cand_ids: np.ndarray  # (M, K) dense entity ids, -1 padding
    cand_mask: np.ndarray  # (M, K) floats
    gold_ids: np.ndarray  # (M,) dense gold entity ids
    gold_cols: np.ndarray  # (M,) column of gold in cand_ids, -1 if absent
    coarse_golds: np.ndarray  # (M,) coarse type of gold, -1 if none
    cand_counts: np.ndarray  # (M, K) gold-label popularity per candidate
    weak: np.ndarray  # (M,) bools
    adj_slices: dict[str, np.ndarray] = field(default_factory=dict)  # (MK, MK)

    @property
    def m(self) -> int:
        return len(self.spans)

    @property
    def k(self) -> int:
        return self.cand_ids.shape[1]


def prepare_sentence(sentence, kb, vocab: Vocab, cfg: TrainConfig,
                     require_gold: bool = True) -> PreparedSentence | None:
    """Resolve a sentence record to integer grids.

    Mentions whose gold entity is missing from their candidate list are
    dropped when require_gold (training); a sentence with no usable mentions
    returns None (skip). Adjacency weights are sliced per candidate pair,
    zeroing within-mention pairs so rivals never boost each other.
    """
    kept = []
    for mention in sentence.mentions:
        text = sentence.mention_text(mention)
        cands = kbmod.candidates(text, kb, cfg.k)
        if not cands:
            continue
        gold_id = kb.entity_ids.get(mention.gold, -1)
        gold_col = next((j for j, (eid, _) in enumerate(cands) if eid == gold_id), -1)
        if require_gold and gold_col < 0:
            continue
        kept.append((mention, cands, gold_id, gold_col))
    if not kept:
        return None

    m = len(kept)
    k = max(len(c) for _, c, _, _ in kept)
    cand_ids = np.full((m, k), -1, dtype=np.intp)
    cand_mask = np.zeros((m, k))
    cand_counts = np.zeros((m, k), dtype=np.int64)
    gold_ids = np.zeros(m, dtype=np.intp)
    gold_cols = np.zeros(m, dtype=np.intp)
    coarse_golds = np.zeros(m, dtype=np.intp)
    weak = np.zeros(m, dtype=bool)
    spans = []
    popularity = kb.popularity or [0] * kb.n_entities
    for i, (mention, cands, gold_id, gold_col) in enumerate(kept):
        spans.append((mention.start, mention.end))
        for j, (eid, _) in enumerate(cands):
            cand_ids[i, j] = eid
            cand_mask[i, j] = 1.0
            cand_counts[i, j] = popularity[eid]
        gold_ids[i] = gold_id
        gold_cols[i] = gold_col
        coarse_golds[i] = kb.coarse_type_of[gold_id] if gold_id >= 0 else -1
        weak[i] = mention.weak

    mk = m * k
    flat = cand_ids.reshape(-1)
    mention_of = np.repeat(np.arange(m), k)
    adj_slices = {}
    for name, adj in kb.adjacencies.items():
        sl = np.zeros((mk, mk))
        if m > 1:
            for a in range(mk):
                if flat[a] < 0:
                    continue
                for b in range(a + 1, mk):
                    if flat[b] < 0 or mention_of[a] == mention_of[b]:
                        continue
                    w = adj.weight(int(flat[a]), int(flat[b]))
                    if w != 0.0:
                        sl[a, b] = sl[b, a] = w
        adj_slices[name] = sl

    return PreparedSentence(
        sentence_id=sentence.sentence_id,
        token_ids=vocab.encode(sentence.tokens),
        spans=spans, cand_ids=cand_ids, cand_mask=cand_mask,
        gold_ids=gold_ids, gold_cols=gold_cols, coarse_golds=coarse_golds,
        cand_counts=cand_counts, weak=weak, adj_slices=adj_slices,
    )


@dataclass
class ModelState:
    config: TrainConfig
    vocab: Vocab
    tables: EmbeddingTables
    token_table: Tensor
    enc_blocks: list[AttentionBlock]
    p2e_blocks: list[AttentionBlock]  # one per layer
    e2e_blocks: list[AttentionBlock]
    kg_w: list[list[Tensor]]  # [layer][adjacency] scalar (1,)
    score_v: Tensor  # (H, 1)
    adjacency_names: list[str]
    n_entities: int
    popularity: list[int] = field(default_factory=list)

    @classmethod
    def init(cls, cfg: TrainConfig, kb, vocab: Vocab, streams: RngStreams | None = None) -> "ModelState":
        cfg.validate()
        streams = streams or RngStreams(cfg.seed)
        adjacency_names = sorted(kb.adjacencies) if cfg.use_kg else []
        tables = init_tables(
            streams.stream("tables"), kb.n_entities, kb.type_vocab_size,
            kb.relation_vocab_size, cfg.h, cfg.d_u, cfg.d_t, cfg.d_r, cfg.d_c, cfg.c)
        token_table = init_token_table(streams.stream("encoder"), len(vocab), cfg.h)
        enc_blocks = init_encoder_blocks(streams.stream("encoder_blocks"), cfg.h,
                                         cfg.heads, cfg.encoder_layers)
        attn_rng = streams.stream("attention")
        p2e_blocks = [AttentionBlock.init(attn_rng, cfg.h, cfg.heads) for _ in range(cfg.layers)]
        e2e_blocks = [AttentionBlock.init(attn_rng, cfg.h, cfg.heads) for _ in range(cfg.layers)]
        kg_w = [[ad.parameter(np.zeros(1)) for _ in adjacency_names] for _ in range(cfg.layers)]
        score_v = ad.parameter(streams.stream("score").normal(scale=1.0 / np.sqrt(cfg.h),
                                                              size=(cfg.h, 1)))
        model = cls(config=cfg, vocab=vocab, tables=tables, token_table=token_table,
                    enc_blocks=enc_blocks, p2e_blocks=p2e_blocks, e2e_blocks=e2e_blocks,
                    kg_w=kg_w, score_v=score_v, adjacency_names=adjacency_names,
                    n_entities=kb.n_entities)
        if cfg.freeze_encoder:
            model.token_table.requires_grad = False
            for block in model.enc_blocks:
                for t in block.params("x").values():
                    t.requires_grad = False
        return model

    def params(self) -> dict[str, Tensor]:
        out = dict(self.tables.params())
        out["token_table"] = self.token_table
        out["score_v"] = self.score_v
        for i, block in enumerate(self.enc_blocks):
            out.update(block.params(f"enc{i}"))
        for i, (p2e, e2e) in enumerate(zip(self.p2e_blocks, self.e2e_blocks)):
            out.update(p2e.params(f"l{i}.p2e"))
            out.update(e2e.params(f"l{i}.e2e"))
        for i, layer_ws in enumerate(self.kg_w):
            for j, w in enumerate(layer_ws):
                out[f"l{i}.kg_w{j}"] = w
        return out

    def trainable_params(self) -> dict[str, Tensor]:
        return {name: t for name, t in self.params().items() if t.requires_grad}

    def forward(self, prep: PreparedSentence, kb, mask_grid=None,
                train: bool = False, drop_rng=None):
        """Run one sentence through encoder, fusion, and the layer stack.

        Returns (s_dis (M, K) Tensor with padding at -1e9, type_logits).
        """
        cfg = self.config
        if mask_grid is None:
            mask_grid = np.zeros((prep.m, prep.k), dtype=bool)
        w_mat = encode_sentence(prep.token_ids, self.vocab, self.token_table,
                                self.enc_blocks, cfg.max_sentence_len,
                                dropout_p=cfg.dropout, rng=drop_rng, train=train)
        ematrix = build_E(
            prep.spans, prep.cand_ids, prep.cand_mask, w_mat, mask_grid,
            kb, self.tables, t_cap=cfg.t, r_cap=cfg.r,
            use_entity=cfg.use_entity, use_type=cfg.use_type, use_kg=cfg.use_kg,
            type_prediction=cfg.type_prediction)
        adj_slices = [prep.adj_slices[name] for name in self.adjacency_names]
        cand_key_mask = prep.cand_mask.reshape(-1)
        e = ematrix.e
        out = None
        for layer in range(cfg.layers):
            out = layer_forward(
                e, w_mat, self.p2e_blocks[layer], self.e2e_blocks[layer],
                adj_slices, self.kg_w[layer], word_mask=None,
                cand_mask=cand_key_mask,
                dropout_p=cfg.dropout, rng=drop_rng, train=train)
            e = out.e_k_avg
        s_dis = score(out, self.score_v, prep.m, prep.k, prep.cand_mask)
        return s_dis, ematrix.type_logits

    def predict_sentence(self, prep: PreparedSentence, kb) -> list[int]:
        s_dis, _ = self.forward(prep, kb, train=False)
        return predict(s_dis, prep.cand_mask, prep.cand_ids)


def sentence_losses(prep: PreparedSentence, s_dis: Tensor, type_logits: Tensor | None,
                    type_prediction: bool):
    """Per-mention disambiguation and type cross-entropy terms."""
    dis_terms, type_terms = [], []
    for i in range(prep.m):
        gold_col = int(prep.gold_cols[i])
        if gold_col < 0:
            continue
        row = ad.reshape(ad.take_rows(s_dis, [i]), (prep.k,))
        dis_terms.append(ad.cross_entropy(row, gold_col))
        if type_prediction and type_logits is not None and prep.coarse_golds[i] >= 0:
            trow = ad.reshape(ad.take_rows(type_logits, [i]), (type_logits.shape[1],))
            type_terms.append(ad.cross_entropy(trow, int(prep.coarse_golds[i])))
    return dis_terms, type_terms
