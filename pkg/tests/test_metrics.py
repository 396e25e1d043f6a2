import math
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from lencap.metrics import (CiderStats, bleu4, build_cider_stats, cider,
                            lcs_length, ngram_counts, rouge_l)

WORDS = st.lists(st.sampled_from("a b c d e f g".split()), min_size=1,
                 max_size=12).map(" ".join)


class TestBleu4:
    def test_identical(self):
        assert bleu4("the cat sat down", "the cat sat down") == pytest.approx(1.0)

    def test_disjoint(self):
        assert bleu4("a b c d", "e f g h") == 0.0

    def test_cat_case_hand_value(self):
        # candidate has no 4-gram; with no smoothing the score is exactly 0
        assert bleu4("the cat sat", "the cat sat down") == 0.0

    def test_full_orders_hand_value(self):
        # cand "a b c d e" vs ref "a b c d f":
        # p1=4/5 p2=3/4 p3=2/3 p4=1/2, BP=1 (c == r)
        want = (4 / 5 * 3 / 4 * 2 / 3 * 1 / 2) ** 0.25
        assert bleu4("a b c d e", "a b c d f") == pytest.approx(want, abs=1e-9)

    def test_brevity_penalty_hand_value(self):
        # cand "a b c d" (c=4) vs ref "a b c d e" (r=5): precisions all 1,
        # BP = exp(1 - 5/4)
        want = math.exp(1 - 5 / 4)
        assert bleu4("a b c d", "a b c d e") == pytest.approx(want, abs=1e-9)

    def test_multiple_references_closest_length(self):
        score = bleu4("a b c d", ["a b c d", "a b c d e f"])
        assert score == pytest.approx(1.0)

    def test_empty_candidate(self):
        with pytest.raises(ValueError):
            bleu4("", "a b")

    def test_clipping(self):
        # "the the the" vs "the cat": p1 clipped to 1/3
        score = bleu4("the the the", "the cat")
        assert score == 0.0  # no bigram match anyway

    @given(WORDS, WORDS)
    @settings(max_examples=80, deadline=None)
    def test_bounds(self, c, r):
        assert 0.0 <= bleu4(c, r) <= 1.0 + 1e-12


class TestRougeL:
    def test_identical(self):
        assert rouge_l("x y z", "x y z") == pytest.approx(1.0)

    def test_disjoint(self):
        assert rouge_l("a b", "c d") == 0.0

    def test_hand_value(self):
        # "a b c d" vs "a c d e": LCS=3, P=R=3/4 -> F = 0.75
        assert rouge_l("a b c d", "a c d e") == pytest.approx(0.75, abs=1e-9)

    def test_beta_weighting(self):
        # LCS=2: P=2/2=1, R=2/4=0.5, beta=1.2
        p, r, b2 = 1.0, 0.5, 1.2 ** 2
        want = (1 + b2) * p * r / (r + b2 * p)
        assert rouge_l("a b", "a b c d") == pytest.approx(want, abs=1e-9)

    def test_empty_inputs(self):
        with pytest.raises(ValueError):
            rouge_l("", "a")

    def test_lcs_dp(self):
        assert lcs_length(list("abcd"), list("acde")) == 3
        assert lcs_length([], list("ab")) == 0

    @given(WORDS, WORDS)
    @settings(max_examples=80, deadline=None)
    def test_bounds(self, c, r):
        assert 0.0 <= rouge_l(c, r) <= 1.0 + 1e-12


def tfidf_oracle(tokens, n, stats):
    """Independent direct TF-IDF computation (used to verify cider)."""
    grams = [tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1)]
    tf = Counter(grams)
    return {g: tf[g] * math.log((stats.n_docs + 1) / max(stats.df[n - 1][g], 1))
            for g in tf}


def cosine_oracle(a, b):
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0 or nb == 0:
        return 0.0
    return sum(a[g] * b.get(g, 0.0) for g in a) / (na * nb)


class TestCider:
    def test_identical_singleton_corpus(self):
        stats = build_cider_stats(["a baby is playing in a tub"])
        score = cider(["a baby is playing in a tub"],
                      ["a baby is playing in a tub"], stats)
        assert score == pytest.approx(10.0, abs=1e-9)

    def test_disjoint(self):
        stats = build_cider_stats(["a b c d e"])
        assert cider(["v w x y z"], ["a b c d e"], stats) == 0.0

    def test_three_sentence_toy_oracle(self):
        refs = ["a dog runs in a park",
                "a cat sits on a mat",
                "a dog sits in a tub"]
        cands = ["a dog runs in a park",
                 "a cat sits on the mat",
                 "a bird sings in a tree"]
        stats = build_cider_stats(refs)
        got = cider(cands, refs, stats)
        want = 0.0
        for c, r in zip(cands, refs):
            pair = 0.0
            for n in range(1, 5):
                pair += cosine_oracle(tfidf_oracle(c.split(), n, stats),
                                      tfidf_oracle(r.split(), n, stats))
            want += 10.0 * pair / 4
        want /= len(cands)
        assert got == pytest.approx(want, abs=1e-12)
        assert 0.0 < got < 10.0

    def test_empty_stats_rejected(self):
        with pytest.raises(ValueError):
            cider(["a"], ["a"], CiderStats())

    def test_pairing_enforced(self):
        stats = build_cider_stats(["a b"])
        with pytest.raises(ValueError):
            cider(["a"], ["a", "b"], stats)

    def test_df_counts_documents_not_occurrences(self):
        stats = build_cider_stats(["a a a", "a b"])
        assert stats.df[0][("a",)] == 2  # two documents, not four tokens

    @given(st.lists(WORDS, min_size=1, max_size=5))
    @settings(max_examples=40, deadline=None)
    def test_nonnegative(self, refs):
        stats = build_cider_stats(refs)
        cands = refs[::-1]
        assert cider(cands, refs, stats) >= 0.0


class TestNgrams:
    def test_counts(self):
        assert ngram_counts(["a", "b", "a", "b"], 2) == \
            Counter({("a", "b"): 2, ("b", "a"): 1})

    def test_too_short(self):
        assert ngram_counts(["a"], 2) == Counter()
