"""Slow, independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import math

import mpmath
import numpy as np


def naive_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    n, k = a.shape
    k2, m = b.shape
    assert k == k2
    out = np.zeros((n, m))
    for i in range(n):
        for j in range(m):
            out[i, j] = math.fsum(a[i, r] * b[r, j] for r in range(k))
    return out


def mp_softmax(row) -> list[float]:
    mpmath.mp.dps = 50
    xs = [mpmath.mpf(float(v)) for v in row]
    m = max(xs)
    es = [mpmath.e ** (x - m) for x in xs]
    total = mpmath.fsum(es)
    return [float(e / total) for e in es]


def logsumexp(values) -> float:
    values = list(values)
    if not values:
        return -math.inf
    m = max(values)
    return m + math.log(math.fsum(math.exp(v - m) for v in values))


def rnnt_alignments(T: int, U: int):
    """Every monotonic path as a symbol string: 'b' (blank, next frame) or
    'l' (label, same frame); the final symbol is always a blank at the last
    frame."""
    body = T - 1 + U
    for label_pos in itertools.combinations(range(body), U):
        path = ["b"] * body
        for p in label_pos:
            path[p] = "l"
        yield path + ["b"]


def rnnt_brute_force_loglik(lp: np.ndarray, labels, blank: int = 0) -> float:
    """log P(labels) by summing every alignment of a (T, U+1, V) lattice."""
    T = lp.shape[0]
    U = len(labels)
    scores = []
    for path in rnnt_alignments(T, U):
        t = u = 0
        s = 0.0
        for sym in path:
            if sym == "l":
                s += lp[t, u, labels[u]]
                u += 1
            else:
                s += lp[t, u, blank]
                t += 1
        scores.append(s)
    return logsumexp(scores)


def capped_frame_counts(T: int, U: int, cap: int):
    """Per-frame emission counts (c_0..c_{T-1}), each <= cap, summing to U."""
    for counts in itertools.product(range(cap + 1), repeat=T):
        if sum(counts) == U:
            yield counts


def rnnt_capped_loglik(lp: np.ndarray, labels, cap: int, blank: int = 0) -> float:
    """log P(labels) restricted to at most ``cap`` labels per frame."""
    T = lp.shape[0]
    scores = []
    for counts in capped_frame_counts(T, len(labels), cap):
        u = 0
        s = 0.0
        for t, c in enumerate(counts):
            for _ in range(c):
                s += lp[t, u, labels[u]]
                u += 1
            s += lp[t, u, blank]
        scores.append(s)
    return logsumexp(scores)


def recursive_edit_distance(a, b) -> int:
    """Plain exponential recursion, no memoization."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    if a[0] == b[0]:
        return recursive_edit_distance(a[1:], b[1:])
    return 1 + min(recursive_edit_distance(a[1:], b),
                   recursive_edit_distance(a, b[1:]),
                   recursive_edit_distance(a[1:], b[1:]))


def naive_stack_downsample(frames: np.ndarray, stack_prev: int, stride: int) -> np.ndarray:
    T, F = frames.shape
    rows = []
    for t in range(0, T, stride):
        parts = []
        for k in range(stack_prev, -1, -1):
            parts.append(frames[max(t - k, 0)])
        rows.append(np.concatenate(parts))
    return np.array(rows)


def naive_attention(query, keys_src, Wq, Wk, Wv, Wo, heads: int, mask=None):
    """Per-head loop: query (d_q,), source (S, d_s)."""
    A = Wq.shape[1]
    dk = A // heads
    q = query @ Wq
    K = keys_src @ Wk
    V = keys_src @ Wv
    S = keys_src.shape[0]
    mask = np.ones(S, dtype=bool) if mask is None else mask
    ctx = np.zeros(A)
    weights = np.zeros((heads, S))
    for h in range(heads):
        sl = slice(h * dk, (h + 1) * dk)
        scores = [float(q[sl] @ K[s, sl]) / math.sqrt(dk) if mask[s] else -math.inf
                  for s in range(S)]
        m = max(scores)
        e = [math.exp(x - m) if x > -math.inf else 0.0 for x in scores]
        z = math.fsum(e)
        w = [v / z for v in e]
        weights[h] = w
        ctx[sl] = sum(w[s] * V[s, sl] for s in range(S))
    return ctx @ Wo, weights
