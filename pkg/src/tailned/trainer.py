"""Losses, popularity-driven 2-D entity masking, the training loop, and the
binary checkpoint format.

2-D masking zeroes a candidate's whole entity embedding (never individual
coordinates) before fusion with a popularity-dependent probability, drawn
independently per candidate per step, in training mode only.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import TrainConfig, config_hash, parse_config, serialize_config
from .encoder import Vocab, build_vocab, parse_vocab, vocab_text
from .fusion import EmbeddingTables
from .kb import popularity_counts
from .model import ModelState, PreparedSentence, prepare_sentence, sentence_losses
from .rng import RngStreams

CLAMP_LO, CLAMP_HI = 0.05, 0.95


@dataclass
class RegScheme:
    """Masking-probability schedule over gold-label popularity counts.

    kind "fixed" uses p literally (including 0); the popularity curves are
    clamped to [0.05, 0.95]. pop_power mirrors the inverse-popularity power
    curve around max_count so more popular means more masked.
    """

    kind: str = "inv_pop_power"
    p: float = 0.0  # fixed(p)
    max_count: int = 10000  # pop_power pivot

    @classmethod
    def from_config(cls, cfg: TrainConfig, observed_max: int = 0) -> "RegScheme":
        max_count = cfg.reg_max_count or max(observed_max, 1)
        return cls(kind=cfg.reg_scheme, p=cfg.reg_fixed_p, max_count=max_count)


def reg_prob(count, scheme: RegScheme):
    """Masking probability for an entity with the given gold-label count.

    Accepts scalars or arrays; count 0 is treated as 1 for schedule
    evaluation (log/ power need x >= 1).
    """
    x = np.maximum(np.asarray(count, dtype=np.float64), 1.0)
    if scheme.kind == "fixed":
        out = np.full_like(x, float(scheme.p))
        return out if out.ndim else float(out)
    if scheme.kind == "inv_pop_power":
        raw = 0.95 * np.power(x, -0.32)
    elif scheme.kind == "inv_pop_linear":
        raw = -0.00009 * x + 0.9501
    elif scheme.kind == "inv_pop_log":
        raw = -0.097 * np.log(x) + 0.96
    elif scheme.kind == "pop_power":
        raw = 0.95 * np.power(np.maximum(scheme.max_count, 1) / x, -0.32)
    else:
        raise ValueError(f"unknown masking scheme {scheme.kind!r}")
    out = np.clip(raw, CLAMP_LO, CLAMP_HI)
    return out if out.ndim else float(out)


def mask_plan(prep: PreparedSentence, scheme: RegScheme, rng) -> np.ndarray:
    """(M, K) boolean plan: True = zero that candidate's entity embedding.

    Draws are i.i.d. per candidate per step. Padding slots are never marked
    (their slot holds the NULL embedding, not an entity row).
    """
    probs = reg_prob(prep.cand_counts, scheme)
    draws = rng.random(probs.shape) < probs
    return draws & (prep.cand_mask > 0)


def disambiguation_loss(dis_terms):
    """Mean of per-mention cross-entropy terms."""
    if not dis_terms:
        raise ValueError("no mentions with gold candidates reached the loss")
    acc = dis_terms[0]
    for t in dis_terms[1:]:
        acc = ad.add(acc, t)
    return ad.mul(acc, 1.0 / len(dis_terms))


def total_loss(l_dis, l_type, type_prediction_on: bool):
    if type_prediction_on and l_type is not None:
        return ad.add(l_dis, l_type)
    return l_dis


# ---------------------------------------------------------------------------
# training loop


def train(corpus, kb, cfg: TrainConfig, out_dir=None, log_every: int = 0):
    """Train a model on a labeled corpus; returns (model, step log).

    Popularity counts are taken from this corpus (anchor and weak labels),
    drive both the masking schedule and later slice assignment, and are
    stored on the model. Checkpoints are written per epoch plus a final
    model.ckpt when out_dir is given.
    """
    cfg.validate()
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    streams = RngStreams(cfg.seed)
    vocab = build_vocab(corpus)
    kb.popularity = popularity_counts(corpus, kb)
    preps = []
    for sentence in corpus:
        prep = prepare_sentence(sentence, kb, vocab, cfg, require_gold=True)
        if prep is not None:
            preps.append(prep)
    if not preps:
        raise ValueError("no trainable sentences after candidate filtering")

    model = ModelState.init(cfg, kb, vocab, streams)
    model.popularity = list(kb.popularity)
    scheme = RegScheme.from_config(cfg, observed_max=max(kb.popularity, default=1))
    trainable = model.trainable_params()
    adam = ad.AdamState(lr=cfg.lr)
    shuffle_rng = streams.stream("shuffle")
    mask_rng = streams.stream("mask")
    drop_rng = streams.stream("dropout")

    log = []
    step = 0
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(len(preps))
        for start in range(0, len(order), cfg.batch_size):
            batch = [preps[i] for i in order[start : start + cfg.batch_size]]
            for t in trainable.values():
                t.zero_grad()
            dis_terms, type_terms = [], []
            masked = total_slots = 0
            try:
                for prep in batch:
                    grid = mask_plan(prep, scheme, mask_rng)
                    masked += int(grid.sum())
                    total_slots += int(prep.cand_mask.sum())
                    s_dis, type_logits = model.forward(prep, kb, mask_grid=grid,
                                                       train=True, drop_rng=drop_rng)
                    d, t = sentence_losses(prep, s_dis, type_logits, cfg.type_prediction)
                    dis_terms.extend(d)
                    type_terms.extend(t)
                l_dis = disambiguation_loss(dis_terms)
                l_type = disambiguation_loss(type_terms) if type_terms else None
                loss = total_loss(l_dis, l_type, cfg.type_prediction)
                ad.backward(loss)
            except ValueError as exc:
                if "non-finite" not in str(exc):
                    raise
                raise RuntimeError(f"non-finite value at training step {step}: {exc}") from exc
            grads = {name: t.grad for name, t in trainable.items() if t.grad is not None}
            ad.adam_step(trainable, grads, adam)
            entry = {"step": step, "epoch": epoch, "loss": loss.item(),
                     "masked_fraction": masked / max(total_slots, 1)}
            log.append(entry)
            if log_every and step % log_every == 0:
                print(f"step {step} epoch {epoch} loss {entry['loss']:.4f} "
                      f"masked {entry['masked_fraction']:.2f}", flush=True)
            step += 1
        if out_dir is not None:
            save_checkpoint(model, f"{out_dir}/epoch{epoch}.ckpt")
    if out_dir is not None:
        save_checkpoint(model, f"{out_dir}/model.ckpt")
    return model, log


# ---------------------------------------------------------------------------
# checkpoints

MAGIC = b"BTLG"
VERSION = 1
SUBLAYER_NORM_LAST = 1


def save_checkpoint(model: ModelState, path) -> None:
    """Binary checkpoint: header (magic, version, sublayer order, float
    width, config hash), embedded config and vocab text, popularity and
    entity row map, then name-sorted float64 parameter blocks."""
    cfg_text = serialize_config(model.config).encode("utf-8")
    voc_text = vocab_text(model.vocab).encode("utf-8")
    pop = np.asarray(model.popularity or [0] * model.n_entities, dtype=np.int64)
    row_map = np.asarray(model.tables.entity_row_map, dtype=np.int64)
    adj_names = ",".join(model.adjacency_names).encode("utf-8")

    parts = [MAGIC, struct.pack("<IBB", VERSION, SUBLAYER_NORM_LAST, 64),
             config_hash(model.config)]
    for blob in (cfg_text, voc_text, adj_names, pop.tobytes(), row_map.tobytes()):
        parts.append(struct.pack("<I", len(blob)))
        parts.append(blob)
    params = model.params()
    parts.append(struct.pack("<I", len(params)))
    for name in sorted(params):
        data = params[name].data
        name_b = name.encode("utf-8")
        parts.append(struct.pack("<H", len(name_b)))
        parts.append(name_b)
        parts.append(struct.pack("<BB", 8, data.ndim))
        parts.append(struct.pack(f"<{data.ndim}I", *data.shape))
        parts.append(np.ascontiguousarray(data).tobytes())
    blob = b"".join(parts)
    with open(path, "wb") as fh:
        fh.write(blob)
        fh.write(hashlib.sha256(blob).digest())


class _Reader:
    def __init__(self, buf: bytes, path):
        self.buf, self.off, self.path = buf, 0, path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise ValueError(f"{self.path}: truncated checkpoint")
        out = self.buf[self.off : self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def block(self) -> bytes:
        (n,) = self.unpack("<I")
        return self.take(n)


def load_checkpoint(path) -> ModelState:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 36 or raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic (expected {MAGIC!r})")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ValueError(f"{path}: checkpoint integrity hash mismatch")
    r = _Reader(body, path)
    r.take(4)
    version, sublayer, width = r.unpack("<IBB")
    if version != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    if sublayer != SUBLAYER_NORM_LAST or width != 64:
        raise ValueError(f"{path}: incompatible checkpoint layout flags")
    stored_hash = r.take(32)
    cfg = parse_config(r.block().decode("utf-8"), source=f"{path}#config").validate()
    if config_hash(cfg) != stored_hash:
        raise ValueError(f"{path}: config hash mismatch")
    vocab = parse_vocab(r.block().decode("utf-8"), source=f"{path}#vocab")
    adj_names_blob = r.block().decode("utf-8")
    adjacency_names = adj_names_blob.split(",") if adj_names_blob else []
    popularity = np.frombuffer(r.block(), dtype=np.int64).tolist()
    row_map = np.frombuffer(r.block(), dtype=np.int64).astype(np.intp)

    (n_params,) = r.unpack("<I")
    params = {}
    for _ in range(n_params):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        dwidth, ndim = r.unpack("<BB")
        if dwidth != 8:
            raise ValueError(f"{path}: parameter {name!r} has unsupported dtype width")
        shape = r.unpack(f"<{ndim}I")
        payload = np.frombuffer(r.take(8 * int(np.prod(shape, dtype=np.int64))),
                                dtype=np.float64).reshape(shape)
        params[name] = ad.parameter(payload.copy())
    if r.off != len(body):
        raise ValueError(f"{path}: trailing bytes in checkpoint")

    from .attention import AttentionBlock  # local to avoid import cycles at module load

    tables = EmbeddingTables.from_params(params, row_map)
    enc_blocks = [AttentionBlock.from_params(f"enc{i}", params, cfg.heads)
                  for i in range(cfg.encoder_layers)]
    p2e_blocks = [AttentionBlock.from_params(f"l{i}.p2e", params, cfg.heads)
                  for i in range(cfg.layers)]
    e2e_blocks = [AttentionBlock.from_params(f"l{i}.e2e", params, cfg.heads)
                  for i in range(cfg.layers)]
    kg_w = [[params[f"l{i}.kg_w{j}"] for j in range(len(adjacency_names))]
            for i in range(cfg.layers)]
    model = ModelState(
        config=cfg, vocab=vocab, tables=tables, token_table=params["token_table"],
        enc_blocks=enc_blocks, p2e_blocks=p2e_blocks, e2e_blocks=e2e_blocks,
        kg_w=kg_w, score_v=params["score_v"], adjacency_names=adjacency_names,
        n_entities=len(popularity), popularity=popularity)
    if cfg.freeze_encoder:
        model.token_table.requires_grad = False
        for block in model.enc_blocks:
            for t in block.params("x").values():
                t.requires_grad = False
    return model
