"""Post-hoc analyses: word histograms, embedding similarity, FastICA.

FastICA here is the symmetric fixed-point variant with a tanh contrast:
center, whiten through an eigendecomposition of the covariance, iterate the
update with symmetric decorrelation, then rank components by the absolute
excess kurtosis of their projections.
"""

from __future__ import annotations

import csv
import re
import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .embedding import LengthEmbedder
from .lengthcodes import encode_length

WORD_RE = re.compile(r"[A-Za-z']+|[.,!?;]")
KURTOSIS_FLOOR = 0.3
RANK_TOL = 1e-10


def word_frequency(captions: list[str], top_n: int = 20) -> list[tuple[str, int]]:
    """Top words by count; punctuation counts as a word, ties break lexically."""
    if not captions:
        raise ValueError("no captions to count")
    counts = Counter()
    for text in captions:
        counts.update(WORD_RE.findall(text))
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    return ranked[:top_n]


def cosine_matrix(vectors: np.ndarray) -> np.ndarray:
    """Pairwise cosine similarities; zero vectors similar to nothing."""
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms == 0.0):
        warnings.warn("zero vector in similarity input; its similarities are 0")
    safe = np.where(norms == 0.0, 1.0, norms)
    unit = vectors / safe[:, None]
    unit[norms == 0.0] = 0.0
    return unit @ unit.T


def similarity_matrices(embedder: LengthEmbedder,
                        ks=None) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Cosine matrices over raw codes t_k and learned embeddings e_k."""
    ks = list(ks) if ks is not None else list(range(1, min(embedder.K, 101) + 1))
    for k in ks:
        if not 1 <= k <= embedder.K:
            raise ValueError(f"length {k} outside [1, {embedder.K}]")
    codes = np.stack([encode_length(k, embedder.K, embedder.scheme).vector
                      for k in ks])
    embs = np.stack([embedder.embed_array(encode_length(k, embedder.K, embedder.scheme))
                     for k in ks])
    return ks, cosine_matrix(codes), cosine_matrix(embs)


# ---------------------------------------------------------------------------
# FastICA


@dataclass
class ICAResult:
    components: np.ndarray        # rows in whitened space, kurtosis-sorted
    unmixing: np.ndarray          # (d, m): projections = (X - mean) @ unmixing
    mean: np.ndarray
    projections: np.ndarray       # (n, m), kurtosis-sorted columns
    kurtosis: np.ndarray          # |excess kurtosis| descending order applied
    converged: bool
    n_iter: int
    kurtosis_informative: bool
    labels: list = field(default_factory=list)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=np.float64) - self.mean) @ self.unmixing


def excess_kurtosis(x: np.ndarray) -> float:
    c = x - x.mean()
    var = (c * c).mean()
    if var == 0.0:
        return 0.0
    return float((c ** 4).mean() / var ** 2 - 3.0)


def _sym_decorrelate(W: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(W @ W.T)
    inv_sqrt = vecs @ np.diag(1.0 / np.sqrt(vals)) @ vecs.T
    return inv_sqrt @ W


def whiten(X: np.ndarray, n_components: int | None = None
           ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Center and whiten; returns (Z, whitener, mean) with cov(Z) = I."""
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / X.shape[0]
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1]
    vals, vecs = vals[order], vecs[:, order]
    keep = vals > RANK_TOL * max(vals[0], 1.0)
    rank = int(keep.sum())
    m = rank if n_components is None else min(n_components, rank)
    if n_components is not None and m < n_components:
        warnings.warn(f"covariance rank {rank} < requested components "
                      f"{n_components}; reducing to {m}")
    whitener = vecs[:, :m] / np.sqrt(vals[:m])
    return Xc @ whitener, whitener, mean


def fastica(X: np.ndarray, n_components: int | None = None, seed: int = 0,
            tol: float = 1e-6, max_iter: int = 500,
            labels: list | None = None) -> ICAResult:
    """Symmetric fixed-point ICA with tanh contrast, kurtosis-sorted output."""
    X = np.asarray(X, dtype=np.float64)
    if n_components is not None and X.shape[0] <= n_components:
        raise ValueError("need more observations than components")
    Z, whitener, mean = whiten(X, n_components)
    n, m = Z.shape
    rng = np.random.default_rng(seed)
    W = _sym_decorrelate(rng.normal(size=(m, m)))
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        Y = Z @ W.T
        G = np.tanh(Y)
        G_prime = 1.0 - G * G
        W_new = _sym_decorrelate(G.T @ Z / n - G_prime.mean(axis=0)[:, None] * W)
        delta = np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0).max()
        W = W_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"fastica did not converge in {max_iter} iterations; "
                      "returning the last iterate")
    projections = Z @ W.T
    kurt = np.array([excess_kurtosis(projections[:, j]) for j in range(m)])
    order = sorted(range(m), key=lambda j: (-abs(kurt[j]), j))
    return ICAResult(
        components=W[order],
        unmixing=whitener @ W[order].T,
        mean=mean,
        projections=projections[:, order],
        kurtosis=kurt[order],
        converged=converged,
        n_iter=it,
        kurtosis_informative=bool(np.max(np.abs(kurt)) > KURTOSIS_FLOOR),
        labels=list(labels) if labels is not None else [],
    )


def embedding_grid(word_table: np.ndarray, word_ids: list[int], word_strings: list[str],
                   embedder: LengthEmbedder, lengths: list[int]
                   ) -> tuple[np.ndarray, list[tuple[str, int]]]:
    """Composed word+length vectors for every (word, length) pair."""
    rows, labels = [], []
    for wid, wstr in zip(word_ids, word_strings):
        wvec = word_table[wid]
        for k in lengths:
            evec = embedder.embed_array(encode_length(k, embedder.K, embedder.scheme))
            rows.append(wvec + evec)
            labels.append((wstr, k))
    return np.stack(rows), labels


def top_responders(ica: ICAResult, dim: int, top_n: int = 25
                   ) -> list[tuple[str, int, float]]:
    """(word, length, response) rows sorted by |response| on one component."""
    if not 0 <= dim < ica.projections.shape[1]:
        raise ValueError(f"component {dim} out of range")
    if not ica.labels:
        raise ValueError("this ICA result carries no row labels")
    values = ica.projections[:, dim]
    order = sorted(range(len(values)), key=lambda i: (-abs(values[i]), i))
    return [(ica.labels[i][0], ica.labels[i][1], float(values[i]))
            for i in order[:top_n]]


# ---------------------------------------------------------------------------
# exports


def write_matrix_csv(ks: list[int], matrix: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["k"] + [str(k) for k in ks])
        for k, row in zip(ks, matrix):
            writer.writerow([k] + [repr(float(v)) for v in row])


def _diverging_color(v: float) -> str:
    v = max(-1.0, min(1.0, v))
    if v >= 0:
        r, g, b = 255, round(255 * (1 - v)), round(255 * (1 - v))
    else:
        r, g, b = round(255 * (1 + v)), round(255 * (1 + v)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def write_heatmap_svg(ks: list[int], matrix: np.ndarray, path, title: str = "",
                      cell: int = 5) -> None:
    """Similarity heatmap on a linear [-1, 1] blue-white-red scale."""
    n = len(ks)
    margin = 30
    size = n * cell
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" '
        f'width="{size + 2 * margin}" height="{size + 2 * margin}">',
        f'<text x="{margin}" y="15" font-size="11">{title}</text>',
    ]
    for i in range(n):
        for j in range(n):
            lines.append(f'<rect x="{margin + j * cell}" y="{margin + i * cell}" '
                         f'width="{cell}" height="{cell}" '
                         f'fill="{_diverging_color(float(matrix[i, j]))}"/>')
    for idx, k in enumerate(ks):
        if k % 10 == 0:
            x = margin + idx * cell
            lines.append(f'<text x="{x}" y="{margin + size + 12}" '
                         f'font-size="8">{k}</text>')
            lines.append(f'<text x="2" y="{margin + idx * cell + 8}" '
                         f'font-size="8">{k}</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_sweep_svg(targets: list[float], diffs: list[float], stds: list[float],
                    path, title: str = "signed difference vs target") -> None:
    """Fig-style line of signed difference with a +/- std band."""
    w, h, margin = 480, 300, 40
    lo = min(min(d - s for d, s in zip(diffs, stds)), 0.0) - 2
    hi = max(max(d + s for d, s in zip(diffs, stds)), 10.0) + 2
    t0, t1 = min(targets), max(targets)

    def px(t):
        return margin + (t - t0) / max(t1 - t0, 1e-9) * (w - 2 * margin)

    def py(v):
        return h - margin - (v - lo) / (hi - lo) * (h - 2 * margin)

    band = [f"{px(t):.1f},{py(d + s):.1f}" for t, d, s in zip(targets, diffs, stds)]
    band += [f"{px(t):.1f},{py(d - s):.1f}"
             for t, d, s in reversed(list(zip(targets, diffs, stds)))]
    line = " ".join(f"{px(t):.1f},{py(d):.1f}" for t, d in zip(targets, diffs))
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">',
        f'<text x="{margin}" y="15" font-size="11">{title}</text>',
        f'<polygon points="{" ".join(band)}" fill="#c0d0f0" stroke="none"/>',
        f'<line x1="{px(t0):.1f}" y1="{py(0):.1f}" x2="{px(t1):.1f}" '
        f'y2="{py(0):.1f}" stroke="#888" stroke-dasharray="4 3"/>',
        f'<line x1="{px(t0):.1f}" y1="{py(10):.1f}" x2="{px(t1):.1f}" '
        f'y2="{py(10):.1f}" stroke="#888" stroke-dasharray="2 5"/>',
        f'<polyline points="{line}" fill="none" stroke="#203080" stroke-width="1.5"/>',
    ]
    for t in targets:
        lines.append(f'<text x="{px(t):.1f}" y="{h - margin + 14}" '
                     f'font-size="8">{t:g}</text>')
    lines.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def write_responders_csv(rows: list[tuple[str, int, float]], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["word", "length", "response"])
        for word, length, value in rows:
            writer.writerow([word, length, repr(float(value))])
