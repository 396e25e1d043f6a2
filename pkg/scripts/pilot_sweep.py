"""Pilot: long-target degradation on a corpus capped at length 50."""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from lencap.corpus import CorpusSpec, GrammarConfig, build_vocabulary, generate_corpus, peaked_histogram
from lencap.decoder import CaptionModel, ModelConfig
from lencap.evaluation import evaluate_at_target
from lencap.training import TrainConfig, train

grammar = GrammarConfig()
vocab = build_vocabulary(grammar, 320)
hist = peaked_histogram(6, 50, 18, width=12.0)
corpus = generate_corpus(CorpusSpec(1200, hist, 6, 50, seed=2000, grammar=grammar), vocab)
eval_set = generate_corpus(CorpusSpec(16, hist, 6, 50, seed=9100, grammar=grammar), vocab)
print("len range", min(s.length for s in corpus), max(s.length for s in corpus), flush=True)

targets = [20, 40, 50, 65, 80, 100]
for seed in (0, 1, 2):
    for scheme in ("ordinal", "level"):
        t0 = time.time()
        config = ModelConfig(vocab_size=vocab.size, layers=2, heads=4, d=64, d_ff=256,
                             max_seq_len=128, d_cond=grammar.condition_dim,
                             scheme=scheme, K=256)
        model = CaptionModel(config, np.random.default_rng(seed),
                             vocab_hash=vocab.content_hash())
        cfg = TrainConfig(epochs=8, learning_rate=3e-3, accumulation_steps=2,
                          scheme=scheme, seed=seed)
        rows = train(model, corpus, cfg, vocab=vocab)
        out = []
        for t in targets:
            rep, _ = evaluate_at_target(model, eval_set, vocab, t)
            out.append(f"t{t}:{rep.diff_signed:+6.1f}~{rep.std:4.1f}")
        print(f"s{seed} {scheme:8s} loss={rows[-1]['loss']:.3f} " + "  ".join(out)
              + f" [{time.time()-t0:.0f}s]", flush=True)
