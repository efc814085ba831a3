"""Batch command-line surface: generation, KB building, weak labeling,
training, evaluation, compression, affordance mining, and gradient checks.

Every command writes a run manifest (JSON) recording the command, seed,
sha256 digests of its inputs, its outputs, and wall-clock time, so runs are
reproducible and comparable by digest.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import autodiff as ad
from . import config as configmod
from . import evalsuite, kb as kbmod, syncorpus, trainer, weaklabel
from .corpus import load_corpus, save_corpus
from .model import prepare_sentence, sentence_losses


def _digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(command: str, manifest_path, inputs, outputs, seed=None,
                   started=None, extra=None) -> None:
    record = {
        "command": command,
        "version": __version__,
        "seed": seed,
        "inputs": {str(p): _digest(p) for p in inputs},
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.monotonic() - started, 3) if started else None,
    }
    if extra:
        record.update(extra)
    with open(manifest_path, "w", encoding="utf-8") as fh:
        json.dump(record, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _load_kb_arg(args) -> kbmod.StructuredKB:
    return kbmod.load_kb_dir(args.kb_dir)


# ---------------------------------------------------------------------------
# subcommands


def cmd_gen_corpus(args) -> int:
    started = time.monotonic()
    params = syncorpus.GenParams(
        n_entities=args.n_entities, n_types=args.n_types,
        n_relations=args.n_relations, n_sentences=args.n_sentences,
        k_ambiguity=args.k_ambiguity, zipf_exponent=args.zipf_exponent,
        pattern_mix=tuple(float(x) for x in args.pattern_mix.split(",")),
        unseen_fraction=args.unseen_fraction, seed=args.seed,
        test_unseen_share=args.test_unseen_share,
    )
    out = Path(args.out)
    syncorpus.generate(params, out)
    outputs = sorted(str(p) for p in out.iterdir())
    write_manifest("gen-corpus", out / "manifest.json", [], outputs,
                   seed=args.seed, started=started,
                   extra={"params": dataclasses.asdict(params)})
    print(f"wrote synthetic KB and corpus to {out}")
    return 0


def cmd_build_kb(args) -> int:
    started = time.monotonic()
    adjacency_paths = {}
    for spec_arg in args.adjacency or []:
        if "=" not in spec_arg:
            raise SystemExit(f"--adjacency expects name=path, got {spec_arg!r}")
        name, path = spec_arg.split("=", 1)
        adjacency_paths[name] = path
    kb = kbmod.load_kb(args.aliases, args.types, args.relations,
                       adjacency_paths=adjacency_paths, coarse_path=args.coarse)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    inputs = [args.aliases, args.types, args.relations]
    if args.coarse:
        inputs.append(args.coarse)
    outputs = []
    if args.corpus:
        corpus = load_corpus(args.corpus)
        inputs.append(args.corpus)
        cooc = kbmod.build_cooccurrence_adjacency(corpus, kb, threshold=args.cooc_threshold)
        kbmod.save_adjacency(cooc, kb, out / "cooccurrence.tsv")
        outputs.append(out / "cooccurrence.tsv")
    summary = out / "kb_summary.txt"
    with open(summary, "w", encoding="utf-8") as fh:
        fh.write(f"entities: {kb.n_entities}\n")
        fh.write(f"aliases: {len(kb.candidate_map)}\n")
        fh.write(f"type_vocab: {kb.type_vocab_size}\n")
        fh.write(f"relation_vocab: {kb.relation_vocab_size}\n")
        fh.write(f"adjacencies: {', '.join(sorted(kb.adjacencies)) or '(none)'}\n")
    outputs.append(summary)
    write_manifest("build-kb", out / "manifest.json", inputs, outputs,
                   started=started, extra={"cooc_threshold": args.cooc_threshold})
    print(f"KB indexed: {kb.n_entities} entities, {len(kb.candidate_map)} aliases")
    return 0


def cmd_weak_label(args) -> int:
    started = time.monotonic()
    corpus = load_corpus(args.corpus)
    kb = kbmod.load_kb_dir(args.kb_dir) if args.kb_dir else None
    _, stats = weaklabel.weak_label_corpus(corpus, kb)
    save_corpus(corpus, args.out)
    write_manifest("weak-label", str(args.out) + ".manifest.json",
                   [args.corpus], [args.out], started=started,
                   extra={"mentions_before": stats.mentions_before,
                          "mentions_after": stats.mentions_after,
                          "ratio": round(stats.ratio, 4)})
    print(f"mentions {stats.mentions_before} -> {stats.mentions_after} "
          f"(ratio {stats.ratio:.2f})")
    return 0


def _config_from_args(args) -> configmod.TrainConfig:
    cfg = configmod.load_config(args.config) if args.config else configmod.TrainConfig()
    for f in dataclasses.fields(configmod.TrainConfig):
        value = getattr(args, f.name, None)
        if value is not None:
            setattr(cfg, f.name, configmod._coerce(f.name, str(value)))
    return cfg.validate()


def cmd_train(args) -> int:
    started = time.monotonic()
    cfg = _config_from_args(args)
    kb = _load_kb_arg(args)
    corpus = load_corpus(args.train)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model, log = trainer.train(corpus, kb, cfg, out_dir=str(out),
                               log_every=args.log_every)
    with open(out / "train_log.jsonl", "w", encoding="utf-8") as fh:
        for entry in log:
            fh.write(json.dumps(entry, sort_keys=True) + "\n")
    outputs = [out / "model.ckpt", out / "train_log.jsonl"]
    write_manifest("train", out / "manifest.json", [args.train], outputs,
                   seed=cfg.seed, started=started,
                   extra={"config_hash": configmod.config_hash(cfg).hex(),
                          "final_loss": log[-1]["loss"] if log else None})
    print(f"trained {cfg.epochs} epochs, final loss {log[-1]['loss']:.4f}; "
          f"checkpoint at {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    started = time.monotonic()
    model = trainer.load_checkpoint(args.checkpoint)
    kb = _load_kb_arg(args)
    test = load_corpus(args.test)
    report = evalsuite.evaluate(model, test, kb)
    lines = [report.text()]

    if args.patterns:
        if not args.answers:
            raise SystemExit("--patterns requires --answers")
        key = syncorpus.load_answer_key(args.answers)
        per_pattern = {}
        for sentence in test:
            if sentence.sentence_id not in key:
                continue
            pattern, _ = key[sentence.sentence_id]
            prep = prepare_sentence(sentence, kb, model.vocab, model.config,
                                    require_gold=False)
            if prep is None:
                continue
            predicted = model.predict_sentence(prep, kb)
            bucket = per_pattern.setdefault(pattern, [0, 0])
            for i in range(prep.m):
                bucket[1] += 1
                if predicted[i] == prep.gold_ids[i]:
                    bucket[0] += 1
        lines.append("[patterns]")
        for pattern in sorted(per_pattern):
            correct, total = per_pattern[pattern]
            lines.append(f"  {pattern}: {correct}/{total} = {correct / total:.4f}")
        lines.append("")

    text = "\n".join(lines)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        write_manifest("eval", str(args.out) + ".manifest.json",
                       [args.checkpoint, args.test], [args.out], started=started)
    print(text, end="")
    return 0


def cmd_compress(args) -> int:
    started = time.monotonic()
    model = trainer.load_checkpoint(args.checkpoint)
    kb_placeholder = None  # compression only needs the model's own popularity
    compressed = evalsuite.compress_embeddings(model, kb_placeholder, args.k_percent)
    trainer.save_checkpoint(compressed, args.out)
    ratio = 100 - args.k_percent
    write_manifest("compress", str(args.out) + ".manifest.json",
                   [args.checkpoint], [args.out], started=started,
                   extra={"k_percent": args.k_percent, "compression_ratio": ratio,
                          "entity_rows": int(compressed.tables.entity.shape[0])})
    print(f"compressed entity table to {compressed.tables.entity.shape[0]} rows "
          f"(ratio {ratio})")
    return 0


def cmd_mine_affordances(args) -> int:
    corpus = load_corpus(args.corpus)
    kb = _load_kb_arg(args)
    words = evalsuite.affordance_keywords(corpus, kb, args.type, n=args.top_n)
    for w in words:
        print(w)
    return 0


def cmd_grad_check(args) -> int:
    """Finite-difference check of the full model loss on a tiny fixture."""
    import tempfile

    from .model import ModelState
    from .encoder import build_vocab
    from .rng import RngStreams

    with tempfile.TemporaryDirectory() as tmp:
        params = syncorpus.GenParams(
            n_entities=30, n_types=4, n_relations=4, n_sentences=40,
            k_ambiguity=3, unseen_fraction=0.1, seed=3)
        meta, kb, splits = syncorpus.generate(params, tmp)
        corpus = splits["train"]
        cfg = configmod.TrainConfig(h=16, heads=4, d_u=8, d_t=8, d_r=8, d_c=8,
                                    dropout=0.0, seed=3)
        vocab = build_vocab(corpus)
        kb.popularity = kbmod.popularity_counts(corpus, kb)
        model = ModelState.init(cfg, kb, vocab, RngStreams(cfg.seed))
        # check at a generic point: the symmetric init ties the max ensemble
        # and leaves flat directions where finite differences are pure noise
        jitter = np.random.default_rng(42)
        for p in model.trainable_params().values():
            p.data += jitter.normal(scale=0.05, size=p.shape)
        preps = [p for s in corpus[:3]
                 if (p := prepare_sentence(s, kb, vocab, cfg)) is not None]

        def loss_fn(_params):
            terms = []
            for prep in preps:
                s_dis, type_logits = model.forward(prep, kb, train=False)
                d, t = sentence_losses(prep, s_dis, type_logits, cfg.type_prediction)
                terms.extend(d)
                terms.extend(t)
            return trainer.disambiguation_loss(terms)

        worst = ad.grad_check(loss_fn, model.trainable_params(), eps=args.eps,
                              probes_per_param=3,
                              rng=np.random.default_rng(0))
    print(f"max relative gradient error: {worst:.3e}")
    if worst < 1e-4:
        print("PASS (< 1e-4)")
        return 0
    print("FAIL (>= 1e-4)")
    return 1


# ---------------------------------------------------------------------------
# argument wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tailned",
        description="Train and evaluate a tail-robust named-entity disambiguator.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-corpus", help="generate the synthetic KB and corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--n-entities", type=int, default=500)
    p.add_argument("--n-types", type=int, default=20)
    p.add_argument("--n-relations", type=int, default=10)
    p.add_argument("--n-sentences", type=int, default=5000)
    p.add_argument("--k-ambiguity", type=int, default=5)
    p.add_argument("--zipf-exponent", type=float, default=1.1)
    p.add_argument("--pattern-mix", default="0.4,0.25,0.2,0.15")
    p.add_argument("--unseen-fraction", type=float, default=0.1)
    p.add_argument("--test-unseen-share", type=float, default=0.5)
    p.set_defaults(func=cmd_gen_corpus)

    p = sub.add_parser("build-kb", help="index KB files and build adjacencies")
    p.add_argument("--aliases", required=True)
    p.add_argument("--types", required=True)
    p.add_argument("--relations", required=True)
    p.add_argument("--coarse")
    p.add_argument("--adjacency", action="append", metavar="NAME=PATH")
    p.add_argument("--corpus", help="labeled corpus for co-occurrence edges")
    p.add_argument("--cooc-threshold", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("weak-label", help="densify labels with page heuristics")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb-dir")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_weak_label)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--train", required=True)
    p.add_argument("--kb-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--log-every", type=int, default=0)
    for f in dataclasses.fields(configmod.TrainConfig):
        p.add_argument(f"--{f.name.replace('_', '-')}", dest=f.name, default=None,
                       metavar=f.name.upper())
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--kb-dir", required=True)
    p.add_argument("--slices", action="store_true",
                   help="kept for symmetry; slice blocks are always reported")
    p.add_argument("--patterns", action="store_true")
    p.add_argument("--answers")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("compress", help="compress entity embeddings")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k-percent", type=float, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compress)

    p = sub.add_parser("mine-affordances", help="top TF-IDF keywords for a type")
    p.add_argument("--corpus", required=True)
    p.add_argument("--kb-dir", required=True)
    p.add_argument("--type", type=int, required=True)
    p.add_argument("--top-n", type=int, default=15)
    p.set_defaults(func=cmd_mine_affordances)

    p = sub.add_parser("grad-check", help="finite-difference check on a tiny model")
    p.add_argument("--eps", type=float, default=1e-5)
    p.set_defaults(func=cmd_grad_check)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
