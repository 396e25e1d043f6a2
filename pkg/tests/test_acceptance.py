"""Acceptance gate: one test per criterion, one printed pass/fail line each.

Training-based criteria share models through a module-level cache; each
training run stays well under the ten-minute budget (about one minute on one
CPU core at the desk-scale defaults: 2 layers, d=64, 1200-1400 samples).
"""

import itertools

import numpy as np

from lencap import autodiff as ad
from lencap.analysis import cosine_matrix, fastica, similarity_matrices, whiten
from lencap.autodiff import Tape, Tensor, softmax_cross_entropy, zero_grads
from lencap.corpus import (BOS, EOS, CorpusSpec, generate_corpus,
                           peaked_histogram, uniform_histogram)
from lencap.decoder import CaptionModel, ModelConfig
from lencap.evaluation import (arbitrary_length_sweep, evaluate_at_target,
                               write_report_csv)
from lencap.generation import GenerationConfig, generate
from lencap.lengthcodes import encode_length
from lencap.metrics import bleu4, build_cider_stats, cider, rouge_l
from lencap.training import TrainConfig, load_checkpoint, save_checkpoint, train

from conftest import tiny_model

SEEDS = (0, 1, 2)
LR = 3e-3
ACCUM = 2
# scarce-short regime stops earlier: longer training makes the bit MLP
# memorize its 8-bit patterns and lose the unseen-short generalization the
# trend criterion measures; the in-distribution regime trains to saturation
EPOCHS = {"min6": 6, "rich": 8, "cap50": 8, "duration": 8}

_corpora = {}
_models = {}


def _report(num, ok, detail):
    print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}")
    assert ok, f"criterion {num}: {detail}"


def _corpus(which, grammar, vocab):
    if which in _corpora:
        return _corpora[which]
    if which == "min6":
        hist = peaked_histogram(6, 26, 14)
        data = (generate_corpus(CorpusSpec(1200, hist, 6, 26, 1000, grammar), vocab),
                generate_corpus(CorpusSpec(30, hist, 6, 26, 9000, grammar), vocab))
    elif which == "cap50":
        hist = peaked_histogram(6, 50, 18, width=12.0)
        data = (generate_corpus(CorpusSpec(1200, hist, 6, 50, 2000, grammar), vocab),
                generate_corpus(CorpusSpec(16, hist, 6, 50, 9100, grammar), vocab))
    elif which == "duration":
        hist = uniform_histogram(5, 24)
        data = (generate_corpus(CorpusSpec(1400, hist, 5, 24, 3000, grammar), vocab),
                generate_corpus(CorpusSpec(30, hist, 5, 24, 9200, grammar), vocab))
    else:
        raise KeyError(which)
    _corpora[which] = data
    return data


def _model(which, scheme, seed, grammar, vocab, mode="tokens"):
    key = (which, scheme, seed, mode)
    if key in _models:
        return _models[key]
    corpus, _ = _corpus(which, grammar, vocab)
    config = ModelConfig(vocab_size=vocab.size, layers=2, heads=4, d=64,
                         d_ff=256, max_seq_len=128,
                         d_cond=grammar.condition_dim, scheme=scheme, K=256)
    model = CaptionModel(config, np.random.default_rng(seed),
                         vocab_hash=vocab.content_hash())
    cfg = TrainConfig(epochs=EPOCHS, learning_rate=LR, accumulation_steps=ACCUM,
                      control_mode=mode, scheme=scheme, seed=seed)
    train(model, corpus, cfg, vocab=vocab)
    _models[key] = model
    return model


# -- criterion 1 -------------------------------------------------------------

def test_criterion_1_code_invariants():
    idx = np.arange(1, 257)
    ordinal = np.stack([encode_length(k, scheme="ordinal").vector for k in idx])
    pop = ordinal.sum(axis=1)
    hamming = pop[:, None] + pop[None, :] - 2 * (ordinal @ ordinal.T)
    ok_ordinal = np.array_equal(hamming, np.abs(idx[:, None] - idx[None, :]))

    from lencap.lengthcodes import decode_bits
    ok_bits = all(decode_bits(encode_length(k, scheme="bit").vector, 256) == k
                  for k in idx)

    level = np.stack([encode_length(k, scheme="level").vector for k in idx])
    ok_level = np.array_equal(level @ level.T, np.eye(256))

    _report(1, ok_ordinal and ok_bits and ok_level,
            f"ordinal Hamming identity {ok_ordinal}, bit round-trip {ok_bits}, "
            f"level orthonormality {ok_level} (exhaustive over K=256)")


# -- criterion 2 -------------------------------------------------------------

def _directional_fd(params, loss_fn, seed, eps=1e-5):
    zero_grads(params)
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    grad = np.concatenate([p.grad.ravel() if p.grad is not None
                           else np.zeros(p.size) for p in params.values()])
    u = np.random.default_rng(seed + 10_000).normal(size=grad.size)
    u /= np.linalg.norm(u)

    def shift(s):
        off = 0
        for p in params.values():
            p.data += s * u[off:off + p.size].reshape(p.shape)
            off += p.size

    shift(eps)
    up = float(loss_fn().data)
    shift(-2 * eps)
    down = float(loss_fn().data)
    shift(eps)
    fd = (up - down) / (2 * eps)
    analytic = float(grad @ u)
    return abs(analytic - fd) / max(abs(fd), 1e-12)


def test_criterion_2_gradient_suite(vocab, grammar):
    worst_prim = 0.0
    for seed in range(20):
        r = np.random.default_rng(seed)
        a = Tensor(r.normal(size=(3, 5)), requires_grad=True)
        w = Tensor(r.normal(size=(5, 4)), requires_grad=True)
        b = Tensor(r.normal(size=4), requires_grad=True)
        g = Tensor(r.normal(size=5), requires_grad=True)
        targets = r.integers(0, 4, size=3)

        def prim_loss():
            h = ad.layer_norm(a, g, Tensor(np.zeros(5)))
            h = ad.activation(ad.affine(h, w, b), "gelu")
            h = ad.multihead_attention(h, h, h, 2, True)
            return ad.softmax_cross_entropy(h, targets)

        params = {"a": a, "w": w, "b": b, "g": g}
        worst_prim = max(worst_prim, _directional_fd(params, prim_loss, seed))

    worst_model = 0.0
    for seed in range(20):
        m = tiny_model(vocab, scheme=("ordinal", "bit", "level")[seed % 3],
                       seed=seed, d=16, heads=2, d_ff=32, K=16,
                       mlp_hidden=(8, 12))
        r = np.random.default_rng(seed)
        ids = [BOS] + list(r.integers(4, vocab.size, size=6))
        cond = r.normal(size=grammar.condition_dim)
        code = encode_length(int(r.integers(1, 17)), 16, m.config.scheme)
        targets = ids[1:] + [EOS]

        def model_loss():
            return softmax_cross_entropy(
                m.forward_teacher_forced(ids, cond, code), targets)

        worst_model = max(worst_model,
                          _directional_fd(m.trainable_params(), model_loss, seed))

    ok = worst_prim <= 1e-4 and worst_model <= 1e-4
    _report(2, ok, f"central-FD relative error over 20 seeds: primitives "
                   f"{worst_prim:.2e}, full embedder+decoder {worst_model:.2e} "
                   f"(bound 1e-4)")


# -- criterion 3 -------------------------------------------------------------

def test_criterion_3_truncation_contract(vocab, grammar):
    model = _model("min6", "ordinal", 0, grammar, vocab)
    _, eval_set = _corpus("min6", grammar, vocab)
    conditions = itertools.cycle(s.condition for s in eval_set)
    strategies = ["greedy", "top_k", "top_p", "greedy", "top_k", "top_p", "beam"]
    violations = 0
    decodes = 0
    for i in range(700):
        target = 1 + (i * 7) % 45
        cfg = GenerationConfig(target=target, mode="tokens",
                               strategy=strategies[i % len(strategies)], seed=i)
        res = generate(model, next(conditions), cfg, vocab)
        decodes += 1
        if res.measured_length > target + 10 or len(res.tokens) > target + 10:
            violations += 1
    for i in range(300):
        target = 0.5 + (i % 24) * 0.5
        cfg = GenerationConfig(target=target, mode="duration",
                               strategy=strategies[i % len(strategies)], seed=i)
        res = generate(model, next(conditions), cfg, vocab)
        decodes += 1
        if res.measured_length > 50 or len(res.tokens) > 50:
            violations += 1
    _report(3, decodes == 1000 and violations == 0,
            f"{violations} violations across {decodes} decodes "
            f"(greedy/beam/top-k/top-p, token targets 1..45, durations 0.5..12 s)")


# -- criteria 4 and 5 --------------------------------------------------------

def _scheme_reports(grammar, vocab, target):
    out = {}
    for scheme in ("ordinal", "bit", "level"):
        per_seed = []
        for seed in SEEDS:
            model = _model("min6", scheme, seed, grammar, vocab)
            _, eval_set = _corpus("min6", grammar, vocab)
            rep, _ = evaluate_at_target(model, eval_set, vocab, target)
            per_seed.append(rep)
        out[scheme] = per_seed
    return out


def test_criterion_4_unseen_short_target_trend(vocab, grammar):
    reports = _scheme_reports(grammar, vocab, target=5)
    diffs = {s: [r.diff_abs for r in rs] for s, rs in reports.items()}
    ordered_seeds = sum(
        diffs["ordinal"][i] < diffs["bit"][i] < diffs["level"][i]
        for i in range(len(SEEDS)))
    ordinal_mean = float(np.mean(diffs["ordinal"]))
    ok = ordered_seeds >= 2 and ordinal_mean <= 2.5
    _report(4, ok,
            f"target 5 on a min-length-6 corpus: |diff| ordinal<bit<level in "
            f"{ordered_seeds}/3 seeds (need >=2); ordinal mean |diff| "
            f"{ordinal_mean:.2f} (bound 2.5); per-seed ordinal "
            f"{[round(d, 2) for d in diffs['ordinal']]}, bit "
            f"{[round(d, 2) for d in diffs['bit']]}, level "
            f"{[round(d, 2) for d in diffs['level']]}")


def test_criterion_5_in_distribution_control(vocab, grammar):
    reports = _scheme_reports(grammar, vocab, target=20)
    means = {s: float(np.mean([r.diff_abs for r in rs]))
             for s, rs in reports.items()}
    stds = {s: float(np.mean([r.std for r in rs])) for s, rs in reports.items()}
    ok = all(m <= 1.5 for m in means.values()) and stds["ordinal"] <= stds["level"]
    _report(5, ok,
            f"target 20: mean |diff| ordinal {means['ordinal']:.2f}, bit "
            f"{means['bit']:.2f}, level {means['level']:.2f} (bound 1.5); "
            f"std ordinal {stds['ordinal']:.2f} <= level {stds['level']:.2f}")


# -- criterion 6 -------------------------------------------------------------

def test_criterion_6_long_target_degradation(vocab, grammar, tmp_path):
    targets = list(range(5, 101, 5))
    long_targets = [t for t in targets if t > 60]
    curves = {}
    for scheme in ("ordinal", "level"):
        for seed in SEEDS:
            model = _model("cap50", scheme, seed, grammar, vocab)
            _, eval_set = _corpus("cap50", grammar, vocab)
            reports, _ = arbitrary_length_sweep(model, eval_set, vocab,
                                                [float(t) for t in targets])
            curves[(scheme, seed)] = {t: r.diff_signed
                                      for t, r in zip(targets, reports)}
            write_report_csv(reports, tmp_path / f"sweep_{scheme}_{seed}.csv")
    good_seeds = 0
    details = []
    for seed in SEEDS:
        ordinal = curves[("ordinal", seed)]
        level = curves[("level", seed)]
        grows = abs(ordinal[100]) > abs(ordinal[65])
        smaller = all(abs(ordinal[t]) < abs(level[t]) for t in long_targets)
        good_seeds += grows and smaller
        details.append(f"seed {seed}: ordinal |d65|={abs(ordinal[65]):.1f} -> "
                       f"|d100|={abs(ordinal[100]):.1f}, level |d80|="
                       f"{abs(level[80]):.1f}")
    _report(6, good_seeds >= 2,
            f"targets > 60 on a length<=50 corpus: ordinal grows yet stays "
            f"below level in {good_seeds}/3 seeds (need >=2); "
            + "; ".join(details))


# -- criterion 7 -------------------------------------------------------------

def test_criterion_7_duration_control(vocab, grammar):
    model = _model("duration", "ordinal", 0, grammar, vocab, mode="duration")
    _, eval_set = _corpus("duration", grammar, vocab)
    diffs = {}
    for target in (2.0, 5.0):
        rep, _ = evaluate_at_target(model, eval_set, vocab, target,
                                    mode="duration")
        diffs[target] = rep.diff_abs
    ok = all(d <= 0.3 for d in diffs.values())
    _report(7, ok, f"duration targets: |diff| at 2.0 s = {diffs[2.0]:.3f}, "
                   f"at 5.0 s = {diffs[5.0]:.3f} (bound 0.3 s)")


# -- criterion 8 -------------------------------------------------------------

def test_criterion_8_metric_oracles():
    checks = []
    checks.append(abs(bleu4("a b c d", "a b c d") - 1.0) <= 1e-9)
    checks.append(abs(rouge_l("a b c d", "a b c d") - 1.0) <= 1e-9)
    stats1 = build_cider_stats(["a b c d"])
    checks.append(abs(cider(["a b c d"], ["a b c d"], stats1) - 10.0) <= 1e-9)
    # documented toy cases, values computed by hand from the formulas
    checks.append(bleu4("the cat sat", "the cat sat down") == 0.0)
    checks.append(abs(rouge_l("a b c d", "a c d e") - 0.75) <= 1e-9)
    want = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
    checks.append(abs(bleu4("a b c d e", "a b c d f") - want) <= 1e-9)
    refs = ["a dog runs in a park", "a cat sits on a mat"]
    stats = build_cider_stats(refs)
    # direct two-sentence computation: candidate 1 == reference 1
    checks.append(abs(cider([refs[0]], [refs[0]], stats) - 10.0) <= 1e-9)
    checks.append(cider(["x y z w"], [refs[0]], stats) == 0.0)
    checks.append(bleu4("a b c d", "e f g h") == 0.0)
    checks.append(rouge_l("a b", "c d") == 0.0)
    _report(8, all(checks),
            f"{sum(checks)}/{len(checks)} metric oracle identities hold to 1e-9")


# -- criterion 9 -------------------------------------------------------------

def test_criterion_9_ica():
    rng = np.random.default_rng(3)
    sources = rng.uniform(-np.sqrt(3), np.sqrt(3), size=(6000, 2))
    A = np.array([[1.0, 0.6], [-0.4, 1.2]])
    X = sources @ A.T
    Z, _, _ = whiten(X)
    cov_err = np.abs(Z.T @ Z / Z.shape[0] - np.eye(2)).max()
    result = fastica(X, seed=0)
    corr = np.abs(np.corrcoef(result.projections.T, sources.T)[:2, 2:])
    rec = min(corr[0].max(), corr[1].max())
    distinct = corr[0].argmax() != corr[1].argmax()
    gauss = fastica(np.random.default_rng(11).normal(size=(10_000, 4)), seed=2)
    null_ok = (not gauss.kurtosis_informative
               and np.max(np.abs(gauss.kurtosis)) <= 0.3)
    ok = cov_err <= 1e-8 and rec >= 0.95 and distinct and null_ok
    _report(9, ok,
            f"2-source recovery |corr| {rec:.3f} (bound 0.95), whitening error "
            f"{cov_err:.1e} (bound 1e-8), Gaussian null flagged "
            f"uninformative={not gauss.kurtosis_informative} "
            f"(max |kurt| {np.max(np.abs(gauss.kurtosis)):.3f})")


# -- criterion 10 ------------------------------------------------------------

def test_criterion_10_similarity_structure(vocab, grammar):
    codes = np.stack([encode_length(k, 256, "ordinal").vector
                      for k in range(1, 257)])
    mat = cosine_matrix(codes)
    monotone = True
    for i in range(256):
        row = mat[i]
        monotone &= bool(np.all(np.diff(row[:i + 1]) >= -1e-12))
        monotone &= bool(np.all(np.diff(row[i:]) <= 1e-12))

    model = _model("min6", "ordinal", 0, grammar, vocab)
    _, _, emb_mat = similarity_matrices(model.embedding.length_embedder,
                                        range(1, 41))
    dense = range(6, 24)  # heavily covered by the min6 corpus
    wins = sum(emb_mat[k - 1, k] > emb_mat[k - 1, k + 9] for k in dense)
    frac = wins / len(list(dense))
    ok = monotone and frac >= 0.8
    _report(10, ok,
            f"ordinal code matrix monotone in |k-j| over K=256: {monotone}; "
            f"trained embedding sim(k,k+1) > sim(k,k+10) for {frac:.0%} of "
            f"densely trained k (bound 80%)")


# -- criterion 11 ------------------------------------------------------------

def test_criterion_11_reproducibility(vocab, grammar, tmp_path):
    corpus, eval_set = _corpus("min6", grammar, vocab)
    ckpt_blobs, report_blobs = [], []
    for i in range(2):
        model = tiny_model(vocab, seed=3)
        cfg = TrainConfig(epochs=1, learning_rate=1e-3, seed=12, scheme="ordinal")
        train(model, corpus[:80], cfg, vocab=vocab)
        out = tmp_path / f"ckpt{i}"
        save_checkpoint(model, out, vocab=vocab)
        blob = (out / "manifest.txt").read_bytes()
        for p in sorted((out / "params").iterdir()):
            blob += p.read_bytes()
        ckpt_blobs.append(blob)
        reloaded = load_checkpoint(out)
        rep, _ = evaluate_at_target(reloaded, eval_set[:8], vocab, 8.0)
        rp = tmp_path / f"report{i}.csv"
        write_report_csv([rep], rp)
        report_blobs.append(rp.read_bytes())
    ok = ckpt_blobs[0] == ckpt_blobs[1] and report_blobs[0] == report_blobs[1]
    _report(11, ok, "identical config + seed gives bit-identical checkpoints "
                    f"({ckpt_blobs[0] == ckpt_blobs[1]}) and byte-identical "
                    f"report CSVs ({report_blobs[0] == report_blobs[1]})")
