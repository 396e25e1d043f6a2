"""Pilot run: does the unseen-short-target trend replicate at desk scale?

Trains the three schemes on a min-length-6 corpus and evaluates at target 5
(unseen) and 20 (in-distribution). Prints per-scheme |difference|.
"""

import sys
import time

import numpy as np

sys.path.insert(0, "src")

from lencap.corpus import CorpusSpec, GrammarConfig, build_vocabulary, generate_corpus, peaked_histogram
from lencap.decoder import CaptionModel, ModelConfig
from lencap.evaluation import evaluate_at_target
from lencap.training import TrainConfig, train

SEED = int(sys.argv[1]) if len(sys.argv) > 1 else 0
N = int(sys.argv[2]) if len(sys.argv) > 2 else 1600
EPOCHS = int(sys.argv[3]) if len(sys.argv) > 3 else 6

grammar = GrammarConfig()
vocab = build_vocabulary(grammar, 320)
hist = peaked_histogram(6, 26, 14)
corpus = generate_corpus(CorpusSpec(N, hist, 6, 26, seed=1000 + SEED, grammar=grammar), vocab)
eval_set = generate_corpus(CorpusSpec(40, hist, 6, 26, seed=9000 + SEED, grammar=grammar), vocab)
print(f"seed={SEED} corpus={N} epochs={EPOCHS} "
      f"len-range {min(s.length for s in corpus)}..{max(s.length for s in corpus)}",
      flush=True)

for scheme in ("ordinal", "bit", "level"):
    t0 = time.time()
    config = ModelConfig(vocab_size=vocab.size, layers=2, heads=4, d=64, d_ff=256,
                         max_seq_len=128, d_cond=grammar.condition_dim,
                         scheme=scheme, K=256)
    model = CaptionModel(config, np.random.default_rng(SEED), vocab_hash=vocab.content_hash())
    cfg = TrainConfig(epochs=EPOCHS, scheme=scheme, seed=SEED)
    rows = train(model, corpus, cfg, vocab=vocab)
    r5, _ = evaluate_at_target(model, eval_set, vocab, 5)
    r20, _ = evaluate_at_target(model, eval_set, vocab, 20)
    print(f"{scheme:8s} loss={rows[-1]['loss']:.3f}  "
          f"t5: mean={r5.mean:5.2f} diff={r5.diff_abs:5.2f} std={r5.std:4.2f}  "
          f"t20: mean={r20.mean:5.2f} diff={r20.diff_abs:5.2f} std={r20.std:4.2f}  "
          f"[{time.time()-t0:.0f}s]", flush=True)
