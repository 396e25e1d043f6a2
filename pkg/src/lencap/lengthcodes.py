"""Length and duration codes: one-hot levels, binary bits, ordinal multi-hot.

A code represents a target size k in 1..K as a binary vector. ``level`` is a
one-hot over K slots, ``bit`` is the big-endian binary expansion of k in
log2(K) slots, and ``ordinal`` is k ones followed by K-k zeros. Durations in
seconds map onto the same 1..K index space through fixed-width bins.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

SCHEMES = ("level", "bit", "ordinal")

DEFAULT_K = 256
DURATION_BIN_SECONDS = 0.1
# ceil guard for inputs that are an exact multiple of the bin width in
# decimal but not in binary (e.g. 2.0 / 0.1)
_CEIL_EPS = 1e-9


@dataclass(frozen=True)
class LengthCode:
    """A binary-vector representation of one length (or duration bin)."""

    scheme: str
    k: int
    K: int
    vector: np.ndarray

    def __post_init__(self):
        self.vector.setflags(write=False)


def bit_width(K: int) -> int:
    return max(1, math.ceil(math.log2(K)))


def encode_length(k: int, K: int = DEFAULT_K, scheme: str = "ordinal") -> LengthCode:
    """Encode k in 1..K under the given scheme.

    Out-of-range k raises; clamping is the caller's policy, never this
    layer's. For the bit scheme K must be a power of two; k == K wraps to
    the all-zero word (k mod K), which stays unique among 1..K.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown length scheme: {scheme!r}")
    if K < 1:
        raise ValueError("K must be positive")
    if not 1 <= k <= K:
        raise ValueError(f"length index {k} outside [1, {K}]")

    if scheme == "level":
        vec = np.zeros(K, dtype=np.float64)
        vec[k - 1] = 1.0
    elif scheme == "ordinal":
        vec = np.zeros(K, dtype=np.float64)
        vec[:k] = 1.0
    else:
        if K & (K - 1):
            raise ValueError("bit scheme requires K to be a power of two")
        width = bit_width(K)
        value = k % K
        vec = np.array([(value >> (width - 1 - i)) & 1 for i in range(width)],
                       dtype=np.float64)
    return LengthCode(scheme=scheme, k=k, K=K, vector=vec)


def decode_bits(vector: np.ndarray, K: int = DEFAULT_K) -> int:
    """Invert the bit encoding; the all-zero word decodes to K."""
    bits = np.asarray(vector)
    value = 0
    for b in bits:
        value = (value << 1) | int(round(float(b)))
    return value if value != 0 else K


def decode_ordinal(vector: np.ndarray) -> int:
    return int(round(float(np.asarray(vector).sum())))


def decode_level(vector: np.ndarray) -> int:
    return int(np.argmax(np.asarray(vector))) + 1


def discretize_duration(seconds: float, bin_seconds: float = DURATION_BIN_SECONDS,
                        K: int = DEFAULT_K) -> int:
    """Map a nonnegative duration to a bin index in 1..K.

    Bins are ceil(seconds / width); everything past K * width (25.6 s at the
    defaults) lands in bin K.
    """
    if seconds < 0:
        raise ValueError(f"duration must be nonnegative, got {seconds}")
    b = math.ceil(seconds / bin_seconds - _CEIL_EPS)
    return min(max(b, 1), K)


def code_dimension(scheme: str, K: int = DEFAULT_K) -> int:
    if scheme == "bit":
        return bit_width(K)
    if scheme in ("level", "ordinal"):
        return K
    raise ValueError(f"unknown length scheme: {scheme!r}")
