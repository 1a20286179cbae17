"""Independent reference implementations used as test oracles.

Nothing in here imports from the package under test.  Each function is a
direct transliteration of a published algorithm or a brute-force definition,
kept deliberately naive so it can be checked by eye.
"""

from __future__ import annotations

import math

MASK64 = (1 << 64) - 1


def splitmix64(seed: int, count: int) -> list[int]:
    """Published splitmix64 reference sequence."""
    out = []
    state = seed & MASK64
    for _ in range(count):
        state = (state + 0x9E3779B97F4A7C15) & MASK64
        z = state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
        out.append(z ^ (z >> 31))
    return out


def _rotl(x: int, k: int) -> int:
    return ((x << k) | (x >> (64 - k))) & MASK64


def xoshiro256ss(state: list[int], count: int) -> list[int]:
    """Published xoshiro256** reference sequence from a 4-word state."""
    s = [w & MASK64 for w in state]
    out = []
    for _ in range(count):
        out.append((_rotl((s[1] * 5) & MASK64, 7) * 9) & MASK64)
        t = (s[1] << 17) & MASK64
        s[2] ^= s[0]
        s[3] ^= s[1]
        s[1] ^= s[2]
        s[0] ^= s[3]
        s[2] ^= t
        s[3] = _rotl(s[3], 45)
    return out


def fnv1a64(data: bytes) -> int:
    h = 0xCBF29CE484222325
    for b in data:
        h = ((h ^ b) * 0x100000001B3) & MASK64
    return h


def tfidf_brute_force(doc_tokens, vocabulary, all_docs):
    """tf(t, doc) * idf(t) by nested loops; idf = ln((1+N)/(1+df)) + 1."""
    n_docs = len(all_docs)
    weights = []
    for term in vocabulary:
        tf = 0
        for tok in doc_tokens:
            if tok == term:
                tf += 1
        df = 0
        for other in all_docs:
            if term in other:
                df += 1
        idf = math.log((1 + n_docs) / (1 + df)) + 1.0
        weights.append(tf * idf)
    return weights


def df_brute_force(term, all_docs):
    return sum(1 for doc in all_docs if term in doc)


def conv1d_positions(in_len: int, kernel: int, stride: int, padding: int, dilation: int) -> int:
    """Count valid window placements by literally enumerating them."""
    padded = in_len + 2 * padding
    count = 0
    start = 0
    while True:
        last_tap = start + dilation * (kernel - 1)
        if last_tap > padded - 1:
            break
        count += 1
        start += stride
    return count


def central_difference(f, params, h: float = 1e-5):
    """Gradient of scalar ``f`` w.r.t. a flat float64 vector, one entry at a time."""
    import numpy as np

    params = np.asarray(params, dtype=np.float64)
    grad = np.zeros_like(params)
    for i in range(params.size):
        plus = params.copy()
        minus = params.copy()
        plus[i] += h
        minus[i] -= h
        grad[i] = (f(plus) - f(minus)) / (2.0 * h)
    return grad
