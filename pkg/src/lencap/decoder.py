"""Autoregressive transformer decoder conditioned on a feature vector.

Pre-norm blocks: causal self-attention, cross-attention over the (projected)
condition vectors, then a GELU feed-forward, with residuals around each.
The language-model head is tied to the word embedding table.

Two forward routes exist on purpose: ``forward_teacher_forced`` runs through
the autodiff ops (trainable), while ``DecoderState`` + ``step`` is a plain
numpy incremental path with per-layer KV caches. They must agree to 1e-10
per logit; tests hold them to that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .embedding import ComposedEmbedding, LengthEmbedder
from .lengthcodes import DEFAULT_K, LengthCode

@dataclass
class ModelConfig:
    vocab_size: int
    layers: int = 2
    heads: int = 4
    d: int = 64
    d_ff: int = 256
    max_seq_len: int = 128
    d_cond: int = 32
    scheme: str = "ordinal"
    K: int = DEFAULT_K
    positional: str = "learned"
    mlp_hidden: tuple[int, int] | None = None
    activation: str = "gelu"

    def __post_init__(self):
        if self.d % self.heads:
            raise ValueError("embedding dim must be divisible by the head count")


@dataclass
class ConditionVector:
    """The feature vector the decoder cross-attends over."""

    h: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.h = np.asarray(self.h, dtype=np.float64)
        if not np.all(np.isfinite(self.h)):
            raise ValueError("condition vector must be finite")


class CaptionModel:
    """Length-conditioned caption decoder over a synthetic condition vector."""

    def __init__(self, config: ModelConfig, rng: np.random.Generator,
                 vocab_hash: str = ""):
        self.config = config
        self.vocab_hash = vocab_hash
        c = config
        embedder = LengthEmbedder(c.scheme, c.d, c.K, rng, hidden=c.mlp_hidden,
                                  activation=c.activation)
        self.embedding = ComposedEmbedding(c.vocab_size, c.d, c.max_seq_len,
                                           embedder, rng, positional=c.positional)
        self.params: dict[str, Tensor] = {}
        for name, p in self.embedding.params.items():
            self.params[f"embed.{name}"] = p

        def mat(name, rows, cols):
            self.params[name] = Tensor(rng.normal(0.0, 0.02, size=(rows, cols)),
                                       requires_grad=True)

        def vec(name, n, value=0.0):
            self.params[name] = Tensor(np.full(n, value), requires_grad=True)

        mat("cond.w", c.d_cond, c.d)
        vec("cond.b", c.d)
        for i in range(c.layers):
            pre = f"block{i}"
            vec(f"{pre}.ln1.g", c.d, 1.0)
            vec(f"{pre}.ln1.b", c.d)
            for proj in ("q", "k", "v", "o"):
                mat(f"{pre}.attn.w{proj}", c.d, c.d)
                vec(f"{pre}.attn.b{proj}", c.d)
            vec(f"{pre}.lnc.g", c.d, 1.0)
            vec(f"{pre}.lnc.b", c.d)
            for proj in ("q", "k", "v", "o"):
                mat(f"{pre}.cross.w{proj}", c.d, c.d)
                vec(f"{pre}.cross.b{proj}", c.d)
            vec(f"{pre}.ln2.g", c.d, 1.0)
            vec(f"{pre}.ln2.b", c.d)
            mat(f"{pre}.ff.w1", c.d, c.d_ff)
            vec(f"{pre}.ff.b1", c.d_ff)
            mat(f"{pre}.ff.w2", c.d_ff, c.d)
            vec(f"{pre}.ff.b2", c.d)
        vec("final_ln.g", c.d, 1.0)
        vec("final_ln.b", c.d)

    # -- parameter bookkeeping ------------------------------------------

    def parameter_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def decoder_parameter_count(self) -> int:
        """Parameters excluding the length embedder (scheme-dependent part)."""
        return sum(p.size for name, p in self.params.items()
                   if not name.startswith("embed.len."))

    def trainable_params(self) -> dict[str, Tensor]:
        return {n: p for n, p in self.params.items() if p.requires_grad}

    # -- autodiff route ---------------------------------------------------

    def _proj(self, x: Tensor, prefix: str, which: str) -> Tensor:
        return ad.affine(x, self.params[f"{prefix}.w{which}"],
                         self.params[f"{prefix}.b{which}"])

    def _ln(self, x: Tensor, name: str) -> Tensor:
        return ad.layer_norm(x, self.params[f"{name}.g"], self.params[f"{name}.b"])

    def condition_memory(self, conditions) -> Tensor:
        """Project condition vectors into the decoder width, one row each."""
        rows = []
        for c in conditions:
            h = c.h if isinstance(c, ConditionVector) else c
            if isinstance(h, Tensor):
                rows.append(h if h.data.ndim == 2 else ad.reshape(h, (1, -1)))
            else:
                arr = np.asarray(h, dtype=np.float64)
                rows.append(Tensor(arr.reshape(1, -1) if arr.ndim == 1 else arr))
        mem = rows[0] if len(rows) == 1 else ad.concat_rows(rows)
        if mem.shape[1] != self.config.d_cond:
            raise ValueError(f"condition dim {mem.shape[1]} != d_cond {self.config.d_cond}")
        return ad.affine(mem, self.params["cond.w"], self.params["cond.b"])

    def forward_batch(self, batch: list[tuple]) -> Tensor:
        """Stacked next-token logits for (input_ids, condition, code) triples.

        Sequences are concatenated row-wise; attention runs block-diagonally
        per sample, so the result is exact, not a padded approximation.
        """
        segments = []
        conditions = []
        codes = []
        ids_all, pos_all, rep = [], [], []
        offset = 0
        for b, (input_ids, condition, code) in enumerate(batch):
            ids = np.asarray(input_ids, dtype=np.int64)
            n = len(ids)
            if n == 0:
                raise ValueError("empty input sequence")
            if n > self.config.max_seq_len:
                raise ValueError(f"sequence length {n} exceeds max "
                                 f"{self.config.max_seq_len}")
            self.embedding._check_indices(ids, np.arange(n))
            ids_all.append(ids)
            pos_all.append(np.arange(n))
            rep.extend([b] * n)
            segments.append((offset, offset + n))
            offset += n
            conditions.append(condition)
            codes.append(code)
        # same composition as ComposedEmbedding.compose, stacked over samples:
        # word row + (per-sample constant) length embedding + positional row
        lmat = self.embedding.length_embedder.embed_batch(codes)
        x = ad.add(ad.add(ad.rows(self.embedding.word_table, np.concatenate(ids_all)),
                          ad.rows(lmat, rep)),
                   ad.rows(self.embedding.pos_table, np.concatenate(pos_all)))
        mem = self.condition_memory(conditions)
        mem_segments = [(b, b + 1) for b in range(len(batch))]
        for i in range(self.config.layers):
            pre = f"block{i}"
            a = self._ln(x, f"{pre}.ln1")
            ctx = ad.segment_attention(self._proj(a, f"{pre}.attn", "q"),
                                       self._proj(a, f"{pre}.attn", "k"),
                                       self._proj(a, f"{pre}.attn", "v"),
                                       self.config.heads, segments, segments, True)
            x = ad.add(x, ad.affine(ctx, self.params[f"{pre}.attn.wo"],
                                    self.params[f"{pre}.attn.bo"]))
            b = self._ln(x, f"{pre}.lnc")
            ctx = ad.segment_attention(self._proj(b, f"{pre}.cross", "q"),
                                       self._proj(mem, f"{pre}.cross", "k"),
                                       self._proj(mem, f"{pre}.cross", "v"),
                                       self.config.heads, segments, mem_segments,
                                       False)
            x = ad.add(x, ad.affine(ctx, self.params[f"{pre}.cross.wo"],
                                    self.params[f"{pre}.cross.bo"]))
            f = self._ln(x, f"{pre}.ln2")
            z = ad.activation(ad.affine(f, self.params[f"{pre}.ff.w1"],
                                        self.params[f"{pre}.ff.b1"]),
                              self.config.activation)
            x = ad.add(x, ad.affine(z, self.params[f"{pre}.ff.w2"],
                                    self.params[f"{pre}.ff.b2"]))
        x = self._ln(x, "final_ln")
        return ad.matmul_t(x, self.params["embed.word_table"])

    def forward_teacher_forced(self, input_ids, condition, code: LengthCode) -> Tensor:
        """Logits (n x v) for next-token prediction over one full input."""
        return self.forward_batch([(input_ids, condition, code)])

    # -- numpy incremental route -----------------------------------------

    def new_state(self, condition, code: LengthCode) -> "DecoderState":
        return DecoderState(self, condition, code)

    def _np_ln(self, x: np.ndarray, name: str) -> np.ndarray:
        return ad.layer_norm_(x, self.params[f"{name}.g"].data,
                              self.params[f"{name}.b"].data)

    def _np_proj(self, x: np.ndarray, prefix: str, which: str) -> np.ndarray:
        return x @ self.params[f"{prefix}.w{which}"].data + self.params[f"{prefix}.b{which}"].data


class DecoderState:
    """Per-generation KV cache; owns nothing of the (frozen) model."""

    def __init__(self, model: CaptionModel, condition, code: LengthCode):
        self.model = model
        c = model.config
        h = condition.h if isinstance(condition, ConditionVector) else np.asarray(condition)
        mem = h.reshape(1, -1) if h.ndim == 1 else h
        if mem.shape[1] != c.d_cond:
            raise ValueError(f"condition dim {mem.shape[1]} != d_cond {c.d_cond}")
        self.memory = mem @ model.params["cond.w"].data + model.params["cond.b"].data
        self.length_vec = model.embedding.length_embedder.embed_array(code)
        self.code = code
        self.pos = 0
        self.k_cache = [np.zeros((0, c.d)) for _ in range(c.layers)]
        self.v_cache = [np.zeros((0, c.d)) for _ in range(c.layers)]
        self.cross_k = [model._np_proj(self.memory, f"block{i}.cross", "k")
                        for i in range(c.layers)]
        self.cross_v = [model._np_proj(self.memory, f"block{i}.cross", "v")
                        for i in range(c.layers)]

    def clone(self) -> "DecoderState":
        dup = object.__new__(DecoderState)
        dup.model = self.model
        dup.memory = self.memory
        dup.length_vec = self.length_vec
        dup.code = self.code
        dup.pos = self.pos
        dup.k_cache = [k.copy() for k in self.k_cache]
        dup.v_cache = [v.copy() for v in self.v_cache]
        dup.cross_k = self.cross_k
        dup.cross_v = self.cross_v
        return dup

    def step(self, token_id: int) -> np.ndarray:
        """Feed one token; return next-token logits, shape (v,)."""
        model, c = self.model, self.model.config
        if self.pos >= c.max_seq_len:
            raise ValueError(f"decoder cache full at max_seq_len={c.max_seq_len}")
        if not 0 <= token_id < c.vocab_size:
            raise IndexError(f"token id {token_id} out of range")
        emb = model.embedding
        x = (emb.word_table.data[token_id] + emb.pos_table.data[self.pos]
             + self.length_vec).reshape(1, -1)
        hd = c.d // c.heads
        inv = 1.0 / math.sqrt(hd)
        for i in range(c.layers):
            pre = f"block{i}"
            a = model._np_ln(x, f"{pre}.ln1")
            q = model._np_proj(a, f"{pre}.attn", "q")
            self.k_cache[i] = np.concatenate(
                [self.k_cache[i], model._np_proj(a, f"{pre}.attn", "k")])
            self.v_cache[i] = np.concatenate(
                [self.v_cache[i], model._np_proj(a, f"{pre}.attn", "v")])
            ctx = np.empty((1, c.d))
            for h in range(c.heads):
                sl = slice(h * hd, (h + 1) * hd)
                scores = (q[:, sl] @ self.k_cache[i][:, sl].T) * inv
                ctx[:, sl] = ad.softmax_(scores) @ self.v_cache[i][:, sl]
            x = x + ctx @ model.params[f"{pre}.attn.wo"].data + model.params[f"{pre}.attn.bo"].data
            b = model._np_ln(x, f"{pre}.lnc")
            qc = model._np_proj(b, f"{pre}.cross", "q")
            ctx = np.empty((1, c.d))
            for h in range(c.heads):
                sl = slice(h * hd, (h + 1) * hd)
                scores = (qc[:, sl] @ self.cross_k[i][:, sl].T) * inv
                ctx[:, sl] = ad.softmax_(scores) @ self.cross_v[i][:, sl]
            x = x + ctx @ model.params[f"{pre}.cross.wo"].data + model.params[f"{pre}.cross.bo"].data
            f = model._np_ln(x, f"{pre}.ln2")
            z = f @ model.params[f"{pre}.ff.w1"].data + model.params[f"{pre}.ff.b1"].data
            if c.activation == "gelu":
                z = ad.gelu_(z)
            elif c.activation == "tanh":
                z = np.tanh(z)
            else:
                z = np.maximum(z, 0.0)
            x = x + z @ model.params[f"{pre}.ff.w2"].data + model.params[f"{pre}.ff.b2"].data
        x = model._np_ln(x, "final_ln")
        logits = x @ emb.word_table.data.T
        self.pos += 1
        return logits[0]
