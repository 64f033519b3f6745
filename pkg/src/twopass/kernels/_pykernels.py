"""Pure-Python reference kernels; used when the compiled extension is absent."""

import math

import numpy as np

_NEG_INF = float("-inf")


def _logaddexp(a, b):
    if a == _NEG_INF:
        return b
    if b == _NEG_INF:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


def rnnt_lattice(blank_lp, label_lp):
    """Forward-backward over a transducer lattice.

    ``blank_lp[t, u]`` is log p(blank | t, u) with shape (T, U+1) and
    ``label_lp[t, u]`` is log p(y_{u+1} | t, u) with shape (T, U).  Returns
    the total log-likelihood and the gradients of the *negative*
    log-likelihood with respect to both inputs.
    """
    blank = np.asarray(blank_lp, dtype=np.float64)
    label = np.asarray(label_lp, dtype=np.float64)
    T, U1 = blank.shape
    U = U1 - 1
    bl = blank.tolist()
    lb = label.tolist() if U else [[] for _ in range(T)]

    alpha = [[_NEG_INF] * U1 for _ in range(T)]
    for t in range(T):
        row = alpha[t]
        for u in range(U1):
            if t == 0 and u == 0:
                row[u] = 0.0
                continue
            a = alpha[t - 1][u] + bl[t - 1][u] if t > 0 else _NEG_INF
            b = row[u - 1] + lb[t][u - 1] if u > 0 else _NEG_INF
            row[u] = _logaddexp(a, b)
    loglik = alpha[T - 1][U] + bl[T - 1][U]

    beta = [[_NEG_INF] * U1 for _ in range(T)]
    for t in range(T - 1, -1, -1):
        row = beta[t]
        for u in range(U, -1, -1):
            if t == T - 1 and u == U:
                row[u] = bl[t][u]
                continue
            a = beta[t + 1][u] + bl[t][u] if t < T - 1 else _NEG_INF
            b = row[u + 1] + lb[t][u] if u < U else _NEG_INF
            row[u] = _logaddexp(a, b)

    g_blank = np.zeros((T, U1))
    g_label = np.zeros((T, U))
    for t in range(T):
        for u in range(U1):
            if t < T - 1:
                nxt = beta[t + 1][u]
            else:
                nxt = 0.0 if u == U else _NEG_INF
            g_blank[t, u] = -math.exp(alpha[t][u] + bl[t][u] + nxt - loglik)
            if u < U:
                g_label[t, u] = -math.exp(alpha[t][u] + lb[t][u] + beta[t][u + 1] - loglik)
    return loglik, g_blank, g_label


def edit_distance(a, b):
    """Unit-cost Levenshtein distance between two integer sequences."""
    a = list(a)
    b = list(b)
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i] + [0] * len(b)
        for j, y in enumerate(b, 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y))
        prev = cur
    return prev[-1]
