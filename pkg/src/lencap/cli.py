"""Command-line entry point wiring corpus, training, decoding and analysis.

Every run reads a sectioned key=value config (INI), applies the environment
overrides (LENCAP_SEED, LENCAP_OUT), writes the resolved copy into the
output directory, and puts all artifacts under --out. Exit codes: 0 success,
1 data/runtime error (one-line message on stderr), 2 usage error.
"""

from __future__ import annotations

import argparse
import configparser
import os
import sys
from pathlib import Path

import numpy as np

from . import analysis, evaluation, training
from .corpus import (CorpusSpec, GrammarConfig, Vocabulary, build_vocabulary,
                     generate_corpus, load_jsonl, peaked_histogram, save_jsonl,
                     scene_condition, uniform_histogram)
from .decoder import CaptionModel, ModelConfig
from .embedding import export_embeddings_csv
from .generation import GenerationConfig, generate
from .training import TrainConfig, load_checkpoint, save_checkpoint, train, write_metrics_csv

DEFAULTS = {
    "corpus": {
        "n_samples": "2000", "min_length": "6", "max_length": "30",
        "histogram": "peaked", "peak": "14", "width": "6.0",
        "seed": "1", "vocab_size": "320",
        "eval_samples": "48", "eval_seed": "101",
    },
    "model": {
        "layers": "2", "heads": "4", "d": "64", "d_ff": "256",
        "max_seq_len": "128", "K": "256", "positional": "learned",
    },
    "train": {
        "epochs": "5", "batch_size": "4", "accumulation_steps": "8",
        "learning_rate": "1e-4", "weight_decay": "5e-4", "seed": "0",
    },
    "eval": {"strategy": "greedy", "seed": "7"},
    "analysis": {
        "lengths": "5,10,20,30,40,50,60,70,80,90,100",
        "top_words": "50", "sim_range": "101", "ica_seed": "0",
    },
}


def resolve_config(path: str | None) -> configparser.ConfigParser:
    cp = configparser.ConfigParser()
    cp.read_dict(DEFAULTS)
    if path:
        if not Path(path).exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cp.read(path)
    env_seed = os.environ.get("LENCAP_SEED")
    if env_seed is not None:
        for section in cp.sections():
            for key in ("seed", "eval_seed", "ica_seed"):
                if cp.has_option(section, key):
                    cp.set(section, key, env_seed)
    return cp


def _out_dir(args) -> Path:
    out = Path(os.environ.get("LENCAP_OUT", args.out))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_resolved(cp: configparser.ConfigParser, out: Path) -> None:
    with open(out / "resolved.ini", "w") as fh:
        cp.write(fh)


def _histogram(section) -> dict[int, float]:
    lo, hi = section.getint("min_length"), section.getint("max_length")
    if section.get("histogram") == "uniform":
        return uniform_histogram(lo, hi)
    return peaked_histogram(lo, hi, section.getint("peak"),
                            section.getfloat("width"))


def cmd_corpus(args) -> int:
    cp = resolve_config(args.config)
    out = _out_dir(args)
    sec = cp["corpus"]
    grammar = GrammarConfig()
    vocab = build_vocabulary(grammar, sec.getint("vocab_size"))
    hist = _histogram(sec)
    train_spec = CorpusSpec(sec.getint("n_samples"), hist, sec.getint("min_length"),
                            sec.getint("max_length"), sec.getint("seed"), grammar)
    eval_spec = CorpusSpec(sec.getint("eval_samples"), hist, sec.getint("min_length"),
                           sec.getint("max_length"), sec.getint("eval_seed"), grammar)
    vocab.save(out / "vocab.txt")
    save_jsonl(generate_corpus(train_spec, vocab), out / "corpus.jsonl")
    save_jsonl(generate_corpus(eval_spec, vocab), out / "eval.jsonl")
    _write_resolved(cp, out)
    print(f"corpus: {train_spec.n_samples} train / {eval_spec.n_samples} eval "
          f"samples, vocab size {vocab.size} -> {out}")
    return 0


def _model_from_config(cp, vocab: Vocabulary, scheme: str, seed: int) -> CaptionModel:
    sec = cp["model"]
    config = ModelConfig(
        vocab_size=vocab.size,
        layers=sec.getint("layers"),
        heads=sec.getint("heads"),
        d=sec.getint("d"),
        d_ff=sec.getint("d_ff"),
        max_seq_len=sec.getint("max_seq_len"),
        d_cond=GrammarConfig().condition_dim,
        scheme=scheme,
        K=sec.getint("K"),
        positional=sec.get("positional"),
    )
    return CaptionModel(config, np.random.default_rng(seed),
                        vocab_hash=vocab.content_hash())


def cmd_train(args) -> int:
    cp = resolve_config(args.config)
    out = _out_dir(args)
    data_dir = Path(args.corpus_dir)
    vocab = Vocabulary.load(data_dir / "vocab.txt")
    samples = load_jsonl(data_dir / "corpus.jsonl")
    sec = cp["train"]
    cfg = TrainConfig(
        epochs=sec.getint("epochs"),
        batch_size=sec.getint("batch_size"),
        accumulation_steps=sec.getint("accumulation_steps"),
        learning_rate=sec.getfloat("learning_rate"),
        weight_decay=sec.getfloat("weight_decay"),
        control_mode=args.mode,
        scheme=args.scheme,
        seed=sec.getint("seed"),
    )
    model = _model_from_config(cp, vocab, args.scheme, cfg.seed)
    rows = train(model, samples, cfg, vocab=vocab)
    save_checkpoint(model, out / "ckpt", vocab=vocab)
    write_metrics_csv([r for r in rows if "kind" not in r], out / "metrics.csv")
    _write_resolved(cp, out)
    print(f"trained {args.scheme}/{args.mode}: final loss "
          f"{rows[-1]['loss']:.4f} -> {out / 'ckpt'}")
    return 0


def _load_model(checkpoint: str, scheme: str | None = None):
    model = load_checkpoint(checkpoint, expect_scheme=scheme)
    vocab = Vocabulary.load(Path(checkpoint) / "vocab.txt")
    if model.vocab_hash and vocab.content_hash() != model.vocab_hash:
        raise training.CheckpointError("checkpoint vocabulary hash mismatch")
    return model, vocab


def _parse_scene(spec: str | None, grammar: GrammarConfig, seed: int) -> dict:
    rng = np.random.default_rng(seed)
    scene = {
        "subject": int(rng.integers(len(grammar.subjects))),
        "action": int(rng.integers(len(grammar.actions))),
        "object": int(rng.integers(len(grammar.objects))),
        "color": int(rng.integers(len(grammar.colors))),
        "object2": 0, "color2": 0, "adverb": 0,
    }
    if spec:
        pools = {"subject": grammar.subjects, "action": grammar.actions,
                 "object": grammar.objects, "color": grammar.colors}
        for part in spec.split(","):
            key, _, value = part.partition("=")
            if key not in pools:
                raise ValueError(f"unknown scene attribute {key!r}")
            scene[key] = pools[key].index(value)
    return scene


def cmd_generate(args) -> int:
    model, vocab = _load_model(args.checkpoint)
    grammar = GrammarConfig()
    scene = _parse_scene(args.scene, grammar, args.seed)
    cfg = GenerationConfig(target=args.target, mode=args.mode,
                           strategy=args.strategy, seed=args.seed)
    result = generate(model, scene_condition(scene, grammar), cfg, vocab)
    measure = (f"{result.measured_duration:.3f} s" if args.mode == "duration"
               else f"{result.measured_length} tokens")
    print(f"{result.text}  [{measure}, target {args.target:g}"
          f"{', clamped' if result.clamped else ''}]")
    return 0


def _parse_targets(spec: str, step: int = 1) -> list[float]:
    if ".." in spec:
        lo, hi = spec.split("..")
        return [float(t) for t in range(int(lo), int(hi) + 1, step)]
    return [float(t) for t in spec.split(",")]


def cmd_eval(args) -> int:
    cp = resolve_config(args.config)
    model, vocab = _load_model(args.checkpoint, scheme=args.scheme)
    samples = load_jsonl(Path(args.corpus_dir) / "eval.jsonl")
    out = _out_dir(args)
    sec = cp["eval"]
    strategy, seed = sec.get("strategy"), sec.getint("seed")
    reports, preds = [], []
    if args.targets:
        for t in _parse_targets(args.targets):
            rep, p = evaluation.evaluate_at_target(
                model, samples, vocab, t, mode=args.mode,
                strategy=strategy, seed=seed)
            reports.append(rep)
            preds.extend(p)
    if args.gold:
        rep, p = evaluation.gold_length_test(model, samples, vocab,
                                             mode=args.mode,
                                             strategy=strategy, seed=seed)
        reports.append(rep)
        preds.extend(p)
    if not reports:
        raise ValueError("nothing to evaluate: pass --gold and/or --targets")
    evaluation.write_report_csv(reports, out / "report.csv")
    evaluation.write_predictions_jsonl(preds, out / "predictions.jsonl")
    _write_resolved(cp, out)
    for r in reports:
        print(f"target {r.target}: mean {r.mean:.3f} +/- {r.std:.3f} "
              f"(|diff| {r.diff_abs:.3f})")
    return 0


def cmd_sweep(args) -> int:
    cp = resolve_config(args.config)
    model, vocab = _load_model(args.checkpoint)
    samples = load_jsonl(Path(args.corpus_dir) / "eval.jsonl")
    out = _out_dir(args)
    sec = cp["eval"]
    targets = _parse_targets(args.targets, args.step)
    reports, preds = evaluation.arbitrary_length_sweep(
        model, samples, vocab, targets, mode=args.mode,
        strategy=sec.get("strategy"), seed=sec.getint("seed"))
    evaluation.write_report_csv(reports, out / "sweep.csv")
    evaluation.write_predictions_jsonl(preds, out / "predictions.jsonl")
    analysis.write_sweep_svg(targets, [r.diff_signed for r in reports],
                             [r.std for r in reports], out / "sweep.svg")
    _write_resolved(cp, out)
    print(f"sweep over {len(targets)} targets -> {out / 'sweep.csv'}")
    return 0


def cmd_analyze(args) -> int:
    cp = resolve_config(args.config)
    model, vocab = _load_model(args.checkpoint)
    out = _out_dir(args)
    sec = cp["analysis"]
    if args.predictions:
        import json
        with open(args.predictions) as fh:
            captions = [json.loads(line)["text"] for line in fh if line.strip()]
    else:
        captions = [s.text for s in load_jsonl(Path(args.corpus_dir) / "corpus.jsonl")]
    freqs = analysis.word_frequency(captions, top_n=20)
    with open(out / "word_freq.csv", "w") as fh:
        fh.write("word,count\n")
        for word, count in freqs:
            fh.write(f"{word},{count}\n")

    embedder = model.embedding.length_embedder
    sim_range = min(sec.getint("sim_range"), model.config.K)
    export_embeddings_csv(out / "embeddings.csv", embedder,
                          ks=range(1, sim_range + 1))
    ks, code_mat, emb_mat = analysis.similarity_matrices(
        embedder, range(1, sim_range + 1))
    analysis.write_matrix_csv(ks, code_mat, out / "sim_codes.csv")
    analysis.write_matrix_csv(ks, emb_mat, out / "sim_embed.csv")
    analysis.write_heatmap_svg(ks, code_mat, out / "sim_codes.svg",
                               title=f"{embedder.scheme} code similarity")
    analysis.write_heatmap_svg(ks, emb_mat, out / "sim_embed.svg",
                               title=f"{embedder.scheme} embedding similarity")

    lengths = [int(v) for v in sec.get("lengths").split(",")]
    lengths = [k for k in lengths if k <= model.config.K]
    top_words = [w for w, _ in analysis.word_frequency(captions,
                                                       sec.getint("top_words"))]
    word_ids, word_strings = [], []
    for w in top_words:
        tid = vocab.str_to_id.get(f" {w}", vocab.str_to_id.get(w))
        if tid is not None:
            word_ids.append(tid)
            word_strings.append(w)
    X, labels = analysis.embedding_grid(model.embedding.word_table.data,
                                        word_ids, word_strings, embedder, lengths)
    ica = analysis.fastica(X, seed=sec.getint("ica_seed"), labels=labels)
    with open(out / "ica_components.csv", "w") as fh:
        fh.write("component,abs_excess_kurtosis,informative\n")
        for i, kv in enumerate(ica.kurtosis):
            fh.write(f"{i},{abs(kv)!r},{ica.kurtosis_informative}\n")
    analysis.write_responders_csv(analysis.top_responders(ica, 0),
                                  out / "responders_dim0.csv")
    _write_resolved(cp, out)
    print(f"analysis artifacts -> {out} (ICA converged={ica.converged}, "
          f"kurtosis informative={ica.kurtosis_informative})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lencap",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corpus", help="generate a synthetic corpus and vocabulary")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_corpus)

    p = sub.add_parser("train", help="train a model on a corpus directory")
    p.add_argument("--config", default=None)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--scheme", required=True, choices=["level", "bit", "ordinal"])
    p.add_argument("--mode", default="tokens", choices=["tokens", "duration"])
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="decode one caption from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--mode", default="tokens", choices=["tokens", "duration"])
    p.add_argument("--strategy", default="greedy",
                   choices=["greedy", "beam", "top_k", "top_p"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scene", default=None,
                   help="e.g. subject=baby,action=playing")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="gold / arbitrary length evaluation")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--mode", default="tokens", choices=["tokens", "duration"])
    p.add_argument("--scheme", default=None,
                   choices=["level", "bit", "ordinal"])
    p.add_argument("--gold", action="store_true")
    p.add_argument("--targets", default=None, help="e.g. 5,20")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="difference-vs-target sweep")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus-dir", required=True)
    p.add_argument("--mode", default="tokens", choices=["tokens", "duration"])
    p.add_argument("--targets", required=True, help="e.g. 5..100")
    p.add_argument("--step", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("analyze", help="word frequency, similarity, ICA")
    p.add_argument("--config", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus-dir", default=None)
    p.add_argument("--predictions", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, training.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
