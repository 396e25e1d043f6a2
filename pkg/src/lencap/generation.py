"""Length- and duration-controlled decoding.

The target is turned into one length code which is injected at every step of
the rollout, whatever the search strategy. Decoding stops at EOS or at the
truncation budget: target + 10 content tokens in tokens mode, a hard 50 in
duration mode. Measured length always comes from round-trip re-tokenization,
measured duration from the duration oracle.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .autodiff import softmax_
from .corpus import BOS, EOS, Vocabulary, canonical_ids, count_tokens, duration_oracle
from .decoder import CaptionModel
from .lengthcodes import discretize_duration, encode_length

TOKENS_EXTRA_BUDGET = 10
DURATION_TOKEN_CAP = 50


@dataclass
class GenerationConfig:
    target: float
    mode: str = "tokens"
    strategy: str = "greedy"
    beam_width: int = 5
    top_k: int = 5
    top_p: float = 0.9
    seed: int = 0
    extra_budget: int = TOKENS_EXTRA_BUDGET
    duration_token_cap: int = DURATION_TOKEN_CAP

    def __post_init__(self):
        if self.mode not in ("tokens", "duration"):
            raise ValueError(f"unknown generation mode: {self.mode!r}")
        if self.strategy not in ("greedy", "beam", "top_k", "top_p"):
            raise ValueError(f"unknown decoding strategy: {self.strategy!r}")
        if self.mode == "tokens" and self.target < 1:
            raise ValueError("token target must be at least 1")
        if self.mode == "duration" and self.target <= 0:
            raise ValueError("duration target must be positive")
        if self.beam_width < 1 or self.top_k < 1:
            raise ValueError("beam width and top-k must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top-p must lie in (0, 1]")
        if self.extra_budget < 1 or self.duration_token_cap < 1:
            raise ValueError("truncation budgets must be positive")


@dataclass
class GenerationResult:
    tokens: list[int]
    text: str
    measured_length: int
    measured_duration: float
    target: float
    mode: str
    code_k: int
    clamped: bool


def _resolve_code(model: CaptionModel, cfg: GenerationConfig):
    K = model.config.K
    if cfg.mode == "tokens":
        want = int(cfg.target)
        clamped = want > K
        if clamped:
            warnings.warn(f"target length {want} clamped to K={K}")
        k = min(max(want, 1), K)
        budget = k + cfg.extra_budget
    else:
        k = discretize_duration(cfg.target, K=K)
        clamped = cfg.target > K * 0.1
        budget = cfg.duration_token_cap
    # BOS occupies one position; emission can never outrun the cache
    budget = min(budget, model.config.max_seq_len - 1)
    return encode_length(k, K, model.config.scheme), budget, clamped


def _pick_top_k(logits: np.ndarray, k: int, rng: np.random.Generator) -> int:
    order = np.argsort(-logits, kind="stable")[:k]
    probs = softmax_(logits[order].reshape(1, -1))[0]
    return int(rng.choice(order, p=probs))


def _pick_top_p(logits: np.ndarray, p: float, rng: np.random.Generator) -> int:
    order = np.argsort(-logits, kind="stable")
    probs = softmax_(logits[order].reshape(1, -1))[0]
    keep = int(np.searchsorted(np.cumsum(probs), p)) + 1
    keep = min(keep, len(order))
    kept = probs[:keep] / probs[:keep].sum()
    return int(rng.choice(order[:keep], p=kept))


def _rollout(model, condition, code, budget, cfg, on_step) -> list[int]:
    rng = np.random.default_rng(cfg.seed)
    state = model.new_state(condition, code)
    out: list[int] = []
    prev = BOS
    while len(out) < budget:
        logits = state.step(prev)
        if on_step is not None:
            on_step(len(out), state.length_vec)
        if cfg.strategy == "greedy":
            nxt = int(np.argmax(logits))
        elif cfg.strategy == "top_k":
            nxt = _pick_top_k(logits, cfg.top_k, rng)
        else:
            nxt = _pick_top_p(logits, cfg.top_p, rng)
        if nxt == EOS:
            break
        out.append(nxt)
        prev = nxt
    return out


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max()
    return z - np.log(np.exp(z).sum())


def _beam_rollout(model, condition, code, budget, cfg, on_step) -> list[int]:
    # beams: (score, ids, state, prev); no length normalization
    live = [(0.0, (), model.new_state(condition, code), BOS)]
    done: list[tuple[float, tuple]] = []
    for step_idx in range(budget):
        candidates = []
        for score, ids, state, prev in live:
            logits = state.step(prev)
            if on_step is not None and not candidates:
                on_step(step_idx, state.length_vec)
            logp = _log_softmax(logits)
            order = np.argsort(-logp, kind="stable")[:cfg.beam_width]
            for tok in order:
                tok = int(tok)
                if tok == EOS:
                    done.append((score + logp[tok], ids))
                else:
                    candidates.append((score + logp[tok], ids + (tok,), state, tok))
        if not candidates:
            break
        candidates.sort(key=lambda b: (-b[0], b[1]))
        live = [(s, ids, state.clone(), prev)
                for s, ids, state, prev in candidates[:cfg.beam_width]]
    done.extend((score, ids) for score, ids, _, _ in live)
    done.sort(key=lambda b: (-b[0], b[1]))
    return list(done[0][1])


def generate(model: CaptionModel, condition, cfg: GenerationConfig,
             vocab: Vocabulary, on_step=None) -> GenerationResult:
    """Decode one caption under the target; model must be frozen."""
    code, budget, clamped = _resolve_code(model, cfg)
    if cfg.strategy == "beam":
        ids = _beam_rollout(model, condition, code, budget, cfg, on_step)
    else:
        ids = _rollout(model, condition, code, budget, cfg, on_step)
    # the budget binds the measured (round-trip) count too, not just raw ids
    while ids and count_tokens(ids, vocab) > budget:
        ids.pop()
    return GenerationResult(
        tokens=ids,
        text=vocab.decode(ids),
        measured_length=count_tokens(ids, vocab),
        measured_duration=duration_oracle(canonical_ids(ids, vocab), vocab),
        target=cfg.target,
        mode=cfg.mode,
        code_k=code.k,
        clamped=clamped,
    )
