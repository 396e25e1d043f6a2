"""Synthetic captioning corpus: template grammar, subword tokenizer, durations.

The corpus stands in for a real captioning dataset. Every sample is a
template realization of a small scene (subject, action, object, color), so
content fidelity stays checkable against the condition vector, and a
composer pads each caption to an exact target token count with attachment
units and an adverb filler chain.

The tokenizer trains byte-pair-style merges over a pilot rendering of the
grammar and tokenizes with greedy longest-match over the subword table.
Generated-token counting is round-trip: decode, strip specials, re-tokenize.

Durations come from a deterministic per-token oracle instead of a speech
synthesizer: 0.06 s per token plus 0.08 s per character.
"""

from __future__ import annotations

import hashlib
import json
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

BOS, EOS, PAD, UNK = 0, 1, 2, 3
SPECIAL_TOKENS = ("<bos>", "<eos>", "<pad>", "<unk>")

TOKEN_BASE_SECONDS = 0.06
PER_CHAR_SECONDS = 0.08

_UNIT_RE = re.compile(r" ?[a-z']+|\.+|[^ ]")


class CorpusError(ValueError):
    pass


# ---------------------------------------------------------------------------
# tokenizer


class Vocabulary:
    """Subword table with greedy longest-match tokenization.

    ids are dense: specials first, then the ordered subword list. Encoding
    scans left to right taking the longest table entry at each position;
    characters outside the table map to UNK with a warning.
    """

    def __init__(self, subwords: list[str], merges: list[tuple[str, str]]):
        self.subwords = list(subwords)
        self.merges = [tuple(m) for m in merges]
        self.id_to_str: list[str] = list(SPECIAL_TOKENS) + self.subwords
        self.str_to_id = {s: len(SPECIAL_TOKENS) + i for i, s in enumerate(self.subwords)}
        if len(self.str_to_id) != len(self.subwords):
            raise CorpusError("duplicate subwords in vocabulary")
        self._max_len = max((len(s) for s in self.subwords), default=1)

    @property
    def size(self) -> int:
        return len(self.id_to_str)

    def encode(self, text: str) -> list[int]:
        ids = []
        i, n = 0, len(text)
        while i < n:
            match = None
            for ln in range(min(self._max_len, n - i), 0, -1):
                piece = text[i:i + ln]
                tid = self.str_to_id.get(piece)
                if tid is not None:
                    match = (tid, ln)
                    break
            if match is None:
                warnings.warn(f"character {text[i]!r} not in vocabulary; emitting UNK")
                ids.append(UNK)
                i += 1
            else:
                ids.append(match[0])
                i += match[1]
        return ids

    def decode(self, ids) -> str:
        return "".join(self.id_to_str[i] for i in ids
                       if i >= len(SPECIAL_TOKENS))

    def token_string(self, token_id: int) -> str:
        return self.id_to_str[token_id]

    def serialize(self) -> str:
        lines = ["lencap-vocab v1", "[subwords]"]
        lines += [json.dumps(s) for s in self.subwords]
        lines.append("[merges]")
        lines += [json.dumps(list(m)) for m in self.merges]
        return "\n".join(lines) + "\n"

    def content_hash(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.serialize())

    @classmethod
    def load(cls, path) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if not lines or lines[0] != "lencap-vocab v1":
            raise CorpusError(f"not a vocabulary file: {path}")
        merged_at = lines.index("[merges]")
        subwords = [json.loads(s) for s in lines[2:merged_at]]
        merges = [tuple(json.loads(s)) for s in lines[merged_at + 1:] if s]
        return cls(subwords, merges)


def pretokenize(text: str) -> list[str]:
    """Split into merge units: space-prefixed words and single punctuation."""
    return _UNIT_RE.findall(text)


def train_vocabulary(texts, vocab_size: int = 320) -> Vocabulary:
    """Learn pair merges over the texts and build the subword table.

    All single characters seen and all whole pre-token units are kept in the
    table, so every training-domain word tokenizes as one piece under greedy
    longest match; the merge-built fragments cover everything else.
    """
    unit_counts = Counter()
    for text in texts:
        unit_counts.update(pretokenize(text))
    chars = sorted({ch for unit in unit_counts for ch in unit})
    pieces = {unit: [ch for ch in unit] for unit in unit_counts}

    merges: list[tuple[str, str]] = []
    learned: list[str] = []
    budget = vocab_size - len(SPECIAL_TOKENS) - len(chars) - len(unit_counts)
    while len(merges) < max(budget, 0):
        pair_counts = Counter()
        for unit, seq in pieces.items():
            w = unit_counts[unit]
            for a, b in zip(seq, seq[1:]):
                pair_counts[(a, b)] += w
        if not pair_counts:
            break
        best, freq = max(pair_counts.items(), key=lambda kv: (kv[1], kv[0]))
        if freq < 2:
            break
        merged = best[0] + best[1]
        merges.append(best)
        if merged not in learned:
            learned.append(merged)
        for unit, seq in pieces.items():
            out, i = [], 0
            while i < len(seq):
                if i + 1 < len(seq) and seq[i] == best[0] and seq[i + 1] == best[1]:
                    out.append(merged)
                    i += 2
                else:
                    out.append(seq[i])
                    i += 1
            pieces[unit] = out

    subwords = list(chars)
    subwords += [s for s in learned if s not in set(subwords)]
    subwords += sorted(u for u in unit_counts if u not in set(subwords))
    return Vocabulary(subwords, merges)


def canonical_ids(ids, vocab: Vocabulary) -> list[int]:
    """Decode, drop specials, re-tokenize: the canonical form of a sequence."""
    return vocab.encode(vocab.decode(ids))


def count_tokens(ids, vocab: Vocabulary) -> int:
    """Round-trip token count: decode, drop specials, re-tokenize, count."""
    return len(canonical_ids(ids, vocab))


def duration_oracle(ids, vocab: Vocabulary,
                    base: float = TOKEN_BASE_SECONDS,
                    per_char: float = PER_CHAR_SECONDS) -> float:
    """Deterministic spoken duration of a token sequence, in seconds.

    A pure sum over the given tokens (specials contribute nothing), so it is
    exactly additive under concatenation. Callers measuring generated output
    canonicalize with canonical_ids first.
    """
    return sum(base + per_char * len(vocab.token_string(t))
               for t in ids if t >= len(SPECIAL_TOKENS))


# ---------------------------------------------------------------------------
# grammar and scenes


@dataclass(frozen=True)
class GrammarConfig:
    subjects: tuple = ("baby", "man", "woman", "dog", "cat",
                       "girl", "boy", "bird", "horse", "child")
    actions: tuple = ("playing", "running", "jumping", "sleeping", "eating",
                      "dancing", "swimming", "climbing", "singing", "walking")
    objects: tuple = ("tub", "ball", "toy", "pool", "slide", "rope",
                      "box", "drum", "kite", "bench", "bucket", "wagon")
    colors: tuple = ("red", "yellow", "blue", "green",
                     "pink", "white", "orange", "purple")
    adverbs: tuple = ("quietly", "slowly", "happily",
                      "gently", "calmly", "loudly")

    @property
    def condition_dim(self) -> int:
        return (len(self.subjects) + len(self.actions)
                + len(self.objects) + len(self.colors))


def pilot_texts(grammar: GrammarConfig) -> list[str]:
    """Deterministic grammar rendering that covers every word for training."""
    texts = []
    for s in grammar.subjects:
        for a in grammar.actions:
            texts.append(f"a {s} is {a}.")
    n = max(len(grammar.objects), len(grammar.colors), len(grammar.adverbs))
    for i in range(n):
        o = grammar.objects[i % len(grammar.objects)]
        o2 = grammar.objects[(i + 1) % len(grammar.objects)]
        c = grammar.colors[i % len(grammar.colors)]
        c2 = grammar.colors[(i + 1) % len(grammar.colors)]
        adv = grammar.adverbs[i % len(grammar.adverbs)]
        s = grammar.subjects[i % len(grammar.subjects)]
        a = grammar.actions[i % len(grammar.actions)]
        texts.append(f"a {s} is {a} in a {c} {o} with a {c2} {o2} "
                     f"and the {s} is {a} very very {adv}.")
        # trailing period runs, so generated "...." re-tokenizes into merges
        texts.append(f"a {s} is {a}" + "." * (2 + i % 3))
    return texts


def build_vocabulary(grammar: GrammarConfig | None = None,
                     vocab_size: int = 320) -> Vocabulary:
    return train_vocabulary(pilot_texts(grammar or GrammarConfig()), vocab_size)


def scene_condition(scene: dict, grammar: GrammarConfig) -> np.ndarray:
    """Concatenated one-hot blocks for the primary scene attributes."""
    blocks = []
    for key, pool in (("subject", grammar.subjects), ("action", grammar.actions),
                      ("object", grammar.objects), ("color", grammar.colors)):
        v = np.zeros(len(pool))
        v[scene[key]] = 1.0
        blocks.append(v)
    return np.concatenate(blocks)


def extract_scene_words(text: str) -> tuple[str, str]:
    """Rule-based recovery of (subject, action) from a template caption."""
    words = text.replace(".", "").split()
    if len(words) < 4 or words[0] != "a" or words[2] != "is":
        raise CorpusError(f"text does not match the template grammar: {text!r}")
    return words[1], words[3]


# ---------------------------------------------------------------------------
# corpus generation


@dataclass
class Sample:
    condition: np.ndarray
    scene: dict
    text: str
    tokens: list[int]
    length: int
    duration: float


@dataclass
class CorpusSpec:
    n_samples: int
    length_histogram: dict[int, float]
    min_length: int
    max_length: int
    seed: int
    grammar: GrammarConfig = field(default_factory=GrammarConfig)

    def __post_init__(self):
        if self.n_samples <= 0:
            raise CorpusError("n_samples must be positive")
        if not self.length_histogram:
            raise CorpusError("length histogram must be nonempty")
        for length, w in self.length_histogram.items():
            if not self.min_length <= length <= self.max_length:
                raise CorpusError(f"histogram length {length} outside "
                                  f"[{self.min_length}, {self.max_length}]")
            if w <= 0:
                raise CorpusError("histogram weights must be positive")


def peaked_histogram(min_len: int, max_len: int, peak: int,
                     width: float = 6.0) -> dict[int, float]:
    """Gaussian-bump length weights, the shape of real caption datasets."""
    return {L: float(np.exp(-((L - peak) / width) ** 2))
            for L in range(min_len, max_len + 1)}


def uniform_histogram(min_len: int, max_len: int) -> dict[int, float]:
    return {L: 1.0 for L in range(min_len, max_len + 1)}


def _unit_stream(scene: dict, grammar: GrammarConfig, rng: np.random.Generator):
    subj = grammar.subjects[scene["subject"]]
    action = grammar.actions[scene["action"]]
    obj = grammar.objects[scene["object"]]
    color = grammar.colors[scene["color"]]
    obj2 = grammar.objects[scene["object2"]]
    color2 = grammar.colors[scene["color2"]]
    yield f" in a {color} {obj}"
    yield f" with a {color2} {obj2}"
    while True:
        c = grammar.colors[rng.integers(len(grammar.colors))]
        o = grammar.objects[rng.integers(len(grammar.objects))]
        yield f" and the {subj} is {action} with a {c} {o}"


def compose_caption(scene: dict, target: int, vocab: Vocabulary,
                    grammar: GrammarConfig, rng: np.random.Generator) -> str:
    """Build a template caption with exactly `target` tokens."""
    subj = grammar.subjects[scene["subject"]]
    action = grammar.actions[scene["action"]]
    adverb = grammar.adverbs[scene["adverb"]]
    body = f"a {subj} is {action}"
    cost = len(vocab.encode(body + "."))
    if target < cost:
        raise CorpusError(f"target length {target} below shortest template ({cost})")
    units = _unit_stream(scene, grammar, rng)
    while cost < target:
        unit = next(units)
        new_cost = len(vocab.encode(body + unit + "."))
        if new_cost > target:
            break
        body += unit
        cost = new_cost
    remaining = target - cost
    if remaining > 0:
        body += " very" * (remaining - 1) + f" {adverb}"
    text = body + "."
    got = len(vocab.encode(text))
    if got != target:
        raise CorpusError(f"composer missed target {target} (got {got}): {text!r}")
    return text


def _sample_scene(rng: np.random.Generator, grammar: GrammarConfig) -> dict:
    return {
        "subject": int(rng.integers(len(grammar.subjects))),
        "action": int(rng.integers(len(grammar.actions))),
        "object": int(rng.integers(len(grammar.objects))),
        "color": int(rng.integers(len(grammar.colors))),
        "object2": int(rng.integers(len(grammar.objects))),
        "color2": int(rng.integers(len(grammar.colors))),
        "adverb": int(rng.integers(len(grammar.adverbs))),
    }


def generate_corpus(spec: CorpusSpec, vocab: Vocabulary) -> list[Sample]:
    """Deterministic corpus for a spec: same seed, byte-identical output."""
    rng = np.random.default_rng(spec.seed)
    lengths = sorted(spec.length_histogram)
    weights = np.array([spec.length_histogram[L] for L in lengths], dtype=np.float64)
    weights /= weights.sum()
    samples = []
    for _ in range(spec.n_samples):
        scene = _sample_scene(rng, spec.grammar)
        target = int(rng.choice(lengths, p=weights))
        text = compose_caption(scene, target, vocab, spec.grammar, rng)
        tokens = vocab.encode(text)
        samples.append(Sample(
            condition=scene_condition(scene, spec.grammar),
            scene=scene,
            text=text,
            tokens=tokens,
            length=len(tokens),
            duration=duration_oracle(tokens, vocab),
        ))
    return samples


def save_jsonl(samples: list[Sample], path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for s in samples:
            fh.write(json.dumps({
                "text": s.text,
                "tokens": s.tokens,
                "length": s.length,
                "duration": s.duration,
                "condition": [float(v) for v in s.condition],
                "scene": s.scene,
            }) + "\n")


def load_jsonl(path) -> list[Sample]:
    samples = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            samples.append(Sample(
                condition=np.asarray(rec["condition"], dtype=np.float64),
                scene=rec["scene"],
                text=rec["text"],
                tokens=list(rec["tokens"]),
                length=int(rec["length"]),
                duration=float(rec["duration"]),
            ))
    return samples
