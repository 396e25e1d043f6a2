"""Embedders that map length codes and tokens into the decoder's d-dim space.

The level scheme uses a plain K x d table (the code is one-hot, so embedding
is row selection). Bit and ordinal codes go through a 3-layer MLP with GELU
between layers, biases, and no normalization; hidden widths default to
(64, 256) for bit and (512, 512) for ordinal.

A composed token embedding is word row + positional row + length embedding,
with the *same* length embedding added at every position of a sequence.
"""

from __future__ import annotations

import csv

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .lengthcodes import LengthCode, code_dimension, encode_length

MLP_HIDDEN = {"bit": (64, 256), "ordinal": (512, 512)}
INIT_STD = 0.02


def _normal(rng: np.random.Generator, shape, std: float = INIT_STD) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class LengthEmbedder:
    """Maps a LengthCode to a d-dim vector, differentiably."""

    def __init__(self, scheme: str, d: int, K: int, rng: np.random.Generator,
                 hidden: tuple[int, int] | None = None, activation: str = "gelu"):
        self.scheme = scheme
        self.d = d
        self.K = K
        self.activation = activation
        self.in_dim = code_dimension(scheme, K)
        self.params: dict[str, Tensor] = {}
        if scheme == "level":
            self.params["table"] = Tensor(_normal(rng, (K, d)), requires_grad=True)
        else:
            h1, h2 = hidden or MLP_HIDDEN[scheme]
            dims = [self.in_dim, h1, h2, d]
            for i in range(3):
                self.params[f"w{i}"] = Tensor(_normal(rng, (dims[i], dims[i + 1])),
                                              requires_grad=True)
                self.params[f"b{i}"] = Tensor(np.zeros(dims[i + 1]), requires_grad=True)

    def _check_code(self, code: LengthCode) -> None:
        if code.scheme != self.scheme:
            raise ValueError(
                f"code scheme {code.scheme!r} does not match embedder {self.scheme!r}")
        if code.K != self.K:
            raise ValueError(f"code K={code.K} does not match embedder K={self.K}")

    def embed_batch(self, codes: list[LengthCode]) -> Tensor:
        """Autodiff forward for several codes at once; shape (len(codes), d)."""
        for code in codes:
            self._check_code(code)
        if self.scheme == "level":
            return ad.rows(self.params["table"], [code.k - 1 for code in codes])
        x = Tensor(np.stack([code.vector for code in codes]), _checked=True)
        for i in range(3):
            x = ad.affine(x, self.params[f"w{i}"], self.params[f"b{i}"])
            if i < 2:
                x = ad.activation(x, self.activation)
        return x

    def embed(self, code: LengthCode) -> Tensor:
        """Autodiff forward; result shape (1, d)."""
        return self.embed_batch([code])

    def embed_array(self, code: LengthCode) -> np.ndarray:
        """Inference fast path; plain numpy, shape (d,)."""
        self._check_code(code)
        if self.scheme == "level":
            return self.params["table"].data[code.k - 1].copy()
        x = code.vector.reshape(1, -1)
        for i in range(3):
            x = x @ self.params[f"w{i}"].data + self.params[f"b{i}"].data
            if i < 2:
                x = ad.gelu_(x) if self.activation == "gelu" else (
                    np.tanh(x) if self.activation == "tanh" else np.maximum(x, 0.0))
        return x[0].copy()


def sinusoidal_table(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None]
    dim = np.arange(d)[None, :]
    angle = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    table = np.where(dim % 2 == 0, np.sin(angle), np.cos(angle))
    return table.astype(np.float64)


class ComposedEmbedding:
    """Word table + positional table + length embedder, all sharing dim d."""

    def __init__(self, vocab_size: int, d: int, max_seq_len: int,
                 length_embedder: LengthEmbedder, rng: np.random.Generator,
                 positional: str = "learned"):
        self.vocab_size = vocab_size
        self.d = d
        self.max_seq_len = max_seq_len
        self.length_embedder = length_embedder
        self.positional = positional
        self.word_table = Tensor(_normal(rng, (vocab_size, d)), requires_grad=True)
        if positional == "learned":
            self.pos_table = Tensor(_normal(rng, (max_seq_len, d)), requires_grad=True)
        elif positional == "sinusoidal":
            self.pos_table = Tensor(sinusoidal_table(max_seq_len, d))
        else:
            raise ValueError(f"unknown positional kind: {positional!r}")

    @property
    def params(self) -> dict[str, Tensor]:
        out = {"word_table": self.word_table}
        if self.pos_table.requires_grad:
            out["pos_table"] = self.pos_table
        for name, p in self.length_embedder.params.items():
            out[f"len.{name}"] = p
        return out

    def _check_indices(self, token_ids, positions):
        ids = np.asarray(token_ids, dtype=np.int64)
        pos = np.asarray(positions, dtype=np.int64)
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise IndexError("token id out of vocabulary range")
        if pos.size and (pos.min() < 0 or pos.max() >= self.max_seq_len):
            raise IndexError("position out of range")
        return ids, pos

    def compose(self, token_ids, positions, code: LengthCode) -> Tensor:
        """x_i = word row + length embedding + positional row, for each i.

        The length term is identical at every position (constant length
        embedding over the whole sequence).
        """
        ids, pos = self._check_indices(token_ids, positions)
        words = ad.rows(self.word_table, ids)
        posv = ad.rows(self.pos_table, pos)
        lvec = self.length_embedder.embed(code)
        n = len(ids)
        lrep = ad.matmul(Tensor(np.ones((n, 1)), _checked=True), lvec)
        return ad.add(ad.add(words, lrep), posv)

    def compose_array(self, token_ids, positions, length_vec: np.ndarray) -> np.ndarray:
        ids, pos = self._check_indices(token_ids, positions)
        return self.word_table.data[ids] + self.pos_table.data[pos] + length_vec


def export_embeddings_csv(path, embedder: LengthEmbedder, ks=None) -> None:
    """Write one row per length: scheme, k, then the d embedding values."""
    ks = range(1, embedder.K + 1) if ks is None else ks
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scheme", "k"] + [f"e{i}" for i in range(embedder.d)])
        for k in ks:
            vec = embedder.embed_array(encode_length(k, embedder.K, embedder.scheme))
            writer.writerow([embedder.scheme, k] + [repr(float(v)) for v in vec])


def load_embeddings_csv(path) -> tuple[str, list[int], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        d = len(header) - 2
        scheme, ks, vecs = None, [], []
        for row in reader:
            scheme = row[0]
            ks.append(int(row[1]))
            vecs.append([float(v) for v in row[2:2 + d]])
    return scheme, ks, np.asarray(vecs)
