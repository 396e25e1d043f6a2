"""Caption quality metrics: BLEU-4, ROUGE-L, CIDEr.

All metrics operate on whitespace-tokenized text. BLEU uses modified n-gram
precisions with a brevity penalty and no smoothing (a zero precision zeroes
the score). ROUGE-L is the LCS F-measure with beta = 1.2. CIDEr averages
TF-IDF n-gram cosines for n = 1..4, scaled by 10, with document frequencies
taken from the reference corpus.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field

NGRAM_MAX = 4
ROUGE_BETA = 1.2


def words(text: str) -> list[str]:
    return text.split()


def ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu4(candidate: str, references: list[str] | str) -> float:
    """Corpus-standard sentence BLEU-4 in [0, 1], no smoothing."""
    if isinstance(references, str):
        references = [references]
    cand = words(candidate)
    if not cand:
        raise ValueError("empty candidate")
    refs = [words(r) for r in references]
    log_sum = 0.0
    for n in range(1, NGRAM_MAX + 1):
        total = max(0, len(cand) - n + 1)
        if total == 0:
            return 0.0
        counts = ngram_counts(cand, n)
        max_ref = Counter()
        for ref in refs:
            for gram, c in ngram_counts(ref, n).items():
                max_ref[gram] = max(max_ref[gram], c)
        matched = sum(min(c, max_ref[gram]) for gram, c in counts.items())
        if matched == 0:
            return 0.0
        log_sum += math.log(matched / total) / NGRAM_MAX
    c_len = len(cand)
    r_len = min((abs(len(r) - c_len), len(r)) for r in refs)[1]
    bp = 1.0 if c_len > r_len else math.exp(1.0 - r_len / c_len)
    return bp * math.exp(log_sum)


def lcs_length(a: list[str], b: list[str]) -> int:
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(cur[j - 1], prev[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate: str, reference: str, beta: float = ROUGE_BETA) -> float:
    cand, ref = words(candidate), words(reference)
    if not cand or not ref:
        raise ValueError("empty input to rouge_l")
    lcs = lcs_length(cand, ref)
    if lcs == 0:
        return 0.0
    p, r = lcs / len(cand), lcs / len(ref)
    return (1 + beta * beta) * p * r / (r + beta * beta * p)


@dataclass
class CiderStats:
    """Document frequencies of reference n-grams, per order."""

    n_docs: int = 0
    df: list[Counter] = field(default_factory=lambda: [Counter() for _ in range(NGRAM_MAX)])


def build_cider_stats(reference_corpus: list[str]) -> CiderStats:
    stats = CiderStats(n_docs=len(reference_corpus))
    for text in reference_corpus:
        toks = words(text)
        for n in range(1, NGRAM_MAX + 1):
            for gram in set(ngram_counts(toks, n)):
                stats.df[n - 1][gram] += 1
    return stats


def _tfidf(tokens: list[str], n: int, stats: CiderStats) -> dict:
    counts = ngram_counts(tokens, n)
    vec = {}
    for gram, tf in counts.items():
        idf = math.log((stats.n_docs + 1) / max(stats.df[n - 1][gram], 1))
        vec[gram] = tf * idf
    return vec


def _cosine(a: dict, b: dict) -> float:
    na = math.sqrt(sum(v * v for v in a.values()))
    nb = math.sqrt(sum(v * v for v in b.values()))
    if na == 0.0 or nb == 0.0:
        return 0.0
    dot = sum(v * b[g] for g, v in a.items() if g in b)
    return dot / (na * nb)


def cider_pair(candidate: str, reference: str, stats: CiderStats) -> float:
    cand, ref = words(candidate), words(reference)
    score = 0.0
    for n in range(1, NGRAM_MAX + 1):
        score += _cosine(_tfidf(cand, n, stats), _tfidf(ref, n, stats))
    return 10.0 * score / NGRAM_MAX


def cider(candidates: list[str], references: list[str], stats: CiderStats) -> float:
    """Mean TF-IDF n-gram cosine over candidate/reference pairs, x10."""
    if stats.n_docs == 0:
        raise ValueError("cider needs document frequencies over a nonempty corpus")
    if len(candidates) != len(references):
        raise ValueError("candidates and references must pair up")
    if not candidates:
        raise ValueError("empty candidate list")
    return sum(cider_pair(c, r, stats) for c, r in zip(candidates, references)) / len(candidates)
