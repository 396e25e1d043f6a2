"""Dense float64 tensors with reverse-mode autodiff on an explicit tape.

Kernels are deliberately plain numpy with explicit shapes: 2-D matmul,
bias-add broadcasting and row-wise ops only. Recording happens when a
``Tape`` is active; without one, every op runs in inference mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

INV_SQRT2 = 1.0 / math.sqrt(2.0)
INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
LN_EPS = 1e-5
# finite stand-in for -inf in attention masks; exp() underflows to exactly 0
NEG_INF_MASK = -1e30

_TAPE_STACK: list["Tape"] = []


def _active_tape():
    return _TAPE_STACK[-1] if _TAPE_STACK else None


class Tensor:
    """A dense row-major float64 array, optionally tracked for gradients."""

    __slots__ = ("data", "requires_grad", "grad", "_grad_owned")

    def __init__(self, data, requires_grad: bool = False, _checked: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if not _checked and not np.all(np.isfinite(arr)):
            raise ValueError("tensor data must be finite (got NaN/Inf)")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._grad_owned = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        # borrow the first contribution; allocate only when a second arrives
        if self.grad is None:
            self.grad = g
            self._grad_owned = False
        elif self._grad_owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._grad_owned = True

    def zero_grad(self) -> None:
        self.grad = None
        self._grad_owned = False

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward) -> Tensor:
    """Wrap an op output; record the backward rule if a tape is listening."""
    tape = _active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=track, _checked=True)
    if track:
        tape._record(out, backward)
    return out


class Tape:
    """Ordered record of executed ops for one forward pass.

    Ops append themselves in execution order, which is a topological order
    of the graph. ``backward`` walks the record once, in reverse, and is
    one-shot: parameter grads accumulate across *tapes* (micro-batches),
    never across repeated backward calls on the same tape.
    """

    def __init__(self):
        self._records: list[tuple[Tensor, object]] = []
        self._used = False

    def __enter__(self):
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc):
        _TAPE_STACK.pop()
        return False

    def __len__(self):
        return len(self._records)

    def _record(self, out: Tensor, backward) -> None:
        self._records.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError("backward requires a scalar loss")
        if self._used:
            raise RuntimeError("tape already consumed; build a fresh tape per forward pass")
        self._used = True
        loss.accumulate_grad(np.ones_like(loss.data))
        for out, fn in reversed(self._records):
            if out.grad is not None:
                fn(out.grad)


def backward(loss: Tensor, tape: Tape) -> None:
    tape.backward(loss)


# ---------------------------------------------------------------------------
# primitive ops


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} x {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g @ b.data.T)
        if b.requires_grad:
            b.accumulate_grad(a.data.T @ g)

    return _result(a.data @ b.data, (a, b), bwd)


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """Fused x @ w + b for 2-D x; one record instead of two."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ValueError(f"affine shape mismatch: {x.shape} x {w.shape}")
    if b.shape != (w.shape[1],):
        raise ValueError(f"affine bias shape {b.shape} != ({w.shape[1]},)")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data.T)
        if w.requires_grad:
            w.accumulate_grad(x.data.T @ g)
        if b.requires_grad:
            b.accumulate_grad(g.sum(axis=0))

    return _result(x.data @ w.data + b.data, (x, w, b), bwd)


def matmul_t(x: Tensor, w: Tensor) -> Tensor:
    """x @ w.T without materializing the transpose (tied-head projection)."""
    if x.data.ndim != 2 or w.data.ndim != 2 or x.shape[1] != w.shape[1]:
        raise ValueError(f"matmul_t shape mismatch: {x.shape} x {w.shape}^T")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g @ w.data)
        if w.requires_grad:
            w.accumulate_grad(g.T @ x.data)

    return _result(x.data @ w.data.T, (x, w), bwd)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ValueError("transpose expects a 2-D tensor")

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.T)

    return _result(a.data.T.copy(), (a,), bwd)


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also supports bias-add of a 1-D b onto rows of a."""
    if a.shape == b.shape:
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g)
    elif b.data.ndim == 1 and a.data.ndim >= 1 and a.shape[-1] == b.shape[0]:
        def bwd(g):
            if a.requires_grad:
                a.accumulate_grad(g)
            if b.requires_grad:
                b.accumulate_grad(g.reshape(-1, b.shape[0]).sum(axis=0))
    else:
        raise ValueError(f"add shape mismatch: {a.shape} + {b.shape}")
    return _result(a.data + b.data, (a, b), bwd)


def add_const(a: Tensor, c: np.ndarray | float) -> Tensor:
    """Add a constant (no gradient flows into it)."""
    c = np.asarray(c, dtype=np.float64)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g if a.shape == g.shape else g.reshape(a.shape))

    return _result(a.data + c, (a,), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ValueError(f"mul shape mismatch: {a.shape} * {b.shape}")

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * b.data)
        if b.requires_grad:
            b.accumulate_grad(g * a.data)

    return _result(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    s = float(s)

    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g * s)

    return _result(a.data * s, (a,), bwd)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), bwd)


def narrow_cols(a: Tensor, start: int, width: int) -> Tensor:
    """Slice columns [start, start+width) of a 2-D tensor."""
    if a.data.ndim != 2:
        raise ValueError("narrow_cols expects a 2-D tensor")
    if start < 0 or start + width > a.shape[1]:
        raise ValueError("narrow_cols out of range")

    def bwd(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[:, start:start + width] = g
            a.accumulate_grad(full)

    return _result(a.data[:, start:start + width].copy(), (a,), bwd)


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.shape[1] for p in parts]

    def bwd(g):
        off = 0
        for p, w in zip(parts, widths):
            if p.requires_grad:
                p.accumulate_grad(g[:, off:off + w])
            off += w

    return _result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


def concat_rows(parts: list[Tensor]) -> Tensor:
    heights = [p.shape[0] for p in parts]

    def bwd(g):
        off = 0
        for p, h in zip(parts, heights):
            if p.requires_grad:
                p.accumulate_grad(g[off:off + h])
            off += h

    return _result(np.concatenate([p.data for p in parts], axis=0), tuple(parts), bwd)


def rows(table: Tensor, indices) -> Tensor:
    """Gather rows of a 2-D table; backward scatter-adds."""
    idx = np.asarray(indices, dtype=np.int64)
    if idx.ndim != 1:
        raise ValueError("rows expects a 1-D index sequence")
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(f"row index out of range for table with {table.shape[0]} rows")

    def bwd(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, idx, g)
            table.accumulate_grad(full)

    return _result(table.data[idx].copy(), (table,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        if a.requires_grad:
            a.accumulate_grad(np.full_like(a.data, float(g)))

    return _result(np.asarray(a.data.sum()), (a,), bwd)


# numpy kernels shared with the inference fast path ------------------------


def gelu_(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + erf(x * INV_SQRT2))


def gelu_grad_(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + erf(x * INV_SQRT2)) + x * np.exp(-0.5 * x * x) * INV_SQRT_2PI


def layer_norm_(x: np.ndarray, gain: np.ndarray, bias: np.ndarray,
                eps: float = LN_EPS) -> np.ndarray:
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def softmax_(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        out = np.maximum(x.data, 0.0)
        deriv = (x.data > 0).astype(np.float64)
    elif kind == "tanh":
        out = np.tanh(x.data)
        deriv = 1.0 - out * out
    elif kind == "gelu":
        out = gelu_(x.data)
        deriv = gelu_grad_(x.data)
    else:
        raise ValueError(f"unknown activation kind: {kind!r}")

    def bwd(g):
        if x.requires_grad:
            x.accumulate_grad(g * deriv)

    return _result(out, (x,), bwd)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = LN_EPS) -> Tensor:
    d = x.shape[-1]
    if d == 0:
        raise ValueError("layer_norm over an empty last dimension")
    if gain.shape != (d,) or bias.shape != (d,):
        raise ValueError("layer_norm gain/bias must match the last dimension")
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv_sigma = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_sigma
    out = xhat * gain.data + bias.data

    def bwd(g):
        if gain.requires_grad:
            gain.accumulate_grad((g * xhat).reshape(-1, d).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate_grad(g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            x.accumulate_grad(inv_sigma * (dxhat - m1 - xhat * m2))

    return _result(out, (x, gain, bias), bwd)


def softmax_rows(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Row-wise softmax; mask, if given, is a constant additive bias."""
    z = x.data if mask is None else x.data + mask
    s = softmax_(z)

    def bwd(g):
        if x.requires_grad:
            inner = (g * s).sum(axis=-1, keepdims=True)
            x.accumulate_grad(s * (g - inner))

    return _result(s, (x,), bwd)


def segment_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                      q_segments, kv_segments, causal: bool) -> Tensor:
    """Scaled dot-product attention over column-split heads, one record.

    Each query row-segment attends only within its paired key/value
    row-segment, so a whole micro-batch of stacked sequences runs block
    diagonally in one op. causal=True masks keys above the query index
    (segments must then pair equal lengths).
    """
    n, d = q.shape
    if d % heads or k.shape[1] != d or v.shape != k.shape:
        raise ValueError(f"attention shape mismatch: q{q.shape} k{k.shape} v{v.shape}")
    if len(q_segments) != len(kv_segments):
        raise ValueError("segment lists must pair up")
    hd = d // heads
    inv = 1.0 / math.sqrt(hd)
    saved = []
    out = np.empty((n, d))
    for (qs, qe), (ks, ke) in zip(q_segments, kv_segments):
        nq, nk = qe - qs, ke - ks
        if causal and nq != nk:
            raise ValueError("causal attention requires matching segment lengths")
        mask = np.triu(np.full((nq, nk), NEG_INF_MASK), k=1) if causal else None
        probs = np.empty((heads, nq, nk))
        for h in range(heads):
            sl = slice(h * hd, (h + 1) * hd)
            scores = (q.data[qs:qe, sl] @ k.data[ks:ke, sl].T) * inv
            if mask is not None:
                scores += mask
            probs[h] = softmax_(scores)
            out[qs:qe, sl] = probs[h] @ v.data[ks:ke, sl]
        saved.append(probs)

    def bwd(g):
        dq = np.zeros_like(q.data) if q.requires_grad else None
        dk = np.zeros_like(k.data) if k.requires_grad else None
        dv = np.zeros_like(v.data) if v.requires_grad else None
        for probs, (qs, qe), (ks, ke) in zip(saved, q_segments, kv_segments):
            for h in range(heads):
                sl = slice(h * hd, (h + 1) * hd)
                p = probs[h]
                if dv is not None:
                    dv[ks:ke, sl] += p.T @ g[qs:qe, sl]
                dp = g[qs:qe, sl] @ v.data[ks:ke, sl].T
                ds = p * (dp - (dp * p).sum(axis=1, keepdims=True))
                if dq is not None:
                    dq[qs:qe, sl] += (ds @ k.data[ks:ke, sl]) * inv
                if dk is not None:
                    dk[ks:ke, sl] += (ds.T @ q.data[qs:qe, sl]) * inv
        if dq is not None:
            q.accumulate_grad(dq)
        if dk is not None:
            k.accumulate_grad(dk)
        if dv is not None:
            v.accumulate_grad(dv)

    return _result(out, (q, k, v), bwd)


def multihead_attention(q: Tensor, k: Tensor, v: Tensor, heads: int,
                        causal: bool) -> Tensor:
    """Single-sequence attention: one query segment over one kv segment."""
    return segment_attention(q, k, v, heads, [(0, q.shape[0])],
                             [(0, k.shape[0])], causal)


def softmax_cross_entropy(logits: Tensor, targets) -> Tensor:
    """Mean negative log likelihood of targets under row-wise softmax."""
    t = np.asarray(targets, dtype=np.int64)
    if logits.data.ndim != 2:
        raise ValueError("softmax_cross_entropy expects n x v logits")
    n, v = logits.shape
    if t.shape != (n,):
        raise ValueError(f"expected {n} targets, got shape {t.shape}")
    if t.size and (t.min() < 0 or t.max() >= v):
        raise IndexError("target index out of vocabulary range")
    m = logits.data.max(axis=1, keepdims=True)
    z = logits.data - m
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    log_probs = z - lse
    loss = -log_probs[np.arange(n), t].mean()

    def bwd(g):
        if logits.requires_grad:
            p = np.exp(log_probs)
            p[np.arange(n), t] -= 1.0
            logits.accumulate_grad(p * (float(g) / n))

    return _result(np.asarray(loss), (logits,), bwd)


# ---------------------------------------------------------------------------
# optimizer


@dataclass
class OptimizerState:
    """AdamW state: decoupled weight decay, bias-corrected moments."""

    learning_rate: float = 1e-4
    weight_decay: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One AdamW update over named parameters. Grads are left untouched."""
    for name, p in params.items():
        if p.grad is None:
            raise RuntimeError(f"parameter {name!r} has no gradient")
    state.step_count += 1
    t = state.step_count
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        g = p.grad
        # decay is decoupled from the adaptive step
        if state.weight_decay:
            p.data -= state.learning_rate * state.weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.data -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.epsilon)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def clip_grad_norm(params: dict[str, Tensor], max_norm: float) -> float:
    """Scale all grads so their joint L2 norm is at most max_norm."""
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    norm = math.sqrt(total)
    if norm > max_norm and norm > 0.0:
        factor = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                # fresh array: grads may be borrowed views shared across tensors
                p.grad = p.grad * factor
                p._grad_owned = True
    return norm
