"""
Scalar-loop transcriptions of the attention equations.

Every entry is computed one at a time from the defining formulas, without
the vectorized code paths, so the two implementations can be compared. This
module depends on math and numpy only. Shapes follow the attention module:
CTA/GTA take F as (d, N); SA/TPS take F as (N, d). Weights are plain arrays
laid out like the block parameters (Dense weights are (out, in)).
"""
import math

import numpy as np


def _relu(x):
    return x if x > 0.0 else 0.0


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    z = math.exp(x)
    return z / (1.0 + z)


def _softmax_row(values):
    top = max(values)
    exps = [math.exp(v - top) for v in values]
    total = sum(exps)
    return [e / total for e in exps]


def oracle_cta(w1, w2, F):
    d, n = F.shape
    hidden = w1.shape[0]
    scores = []
    for i in range(n):
        s = 0.0
        for k in range(hidden):
            z = 0.0
            for j in range(d):
                z += w1[k, j] * F[j, i]
            s += w2[0, k] * _relu(z)
        scores.append(s)
    attention = _softmax_row(scores)
    O = np.zeros((d, n))
    for j in range(d):
        for i in range(n):
            O[j, i] = F[j, i] * attention[i]
    return O, np.array([attention])


def oracle_gta(w1, w2, w3, F):
    d, n = F.shape
    hidden = w2.shape[0]
    a1 = []
    for i in range(n):
        z = 0.0
        for j in range(d):
            z += w1[0, j] * F[j, i]
        a1.append(_relu(z))
    h = []
    for k in range(hidden):
        z = 0.0
        for i in range(n):
            z += w2[k, i] * a1[i]
        h.append(_relu(z))
    attention = []
    for i in range(n):
        z = 0.0
        for k in range(hidden):
            z += w3[i, k] * h[k]
        attention.append(_sigmoid(z))
    O = np.zeros((d, n))
    for j in range(d):
        for i in range(n):
            O[j, i] = F[j, i] * attention[i]
    return O, np.array([attention])


def _project(F, weight, bias=None):
    n, d = F.shape
    out = np.zeros((n, weight.shape[0]))
    for i in range(n):
        for a in range(weight.shape[0]):
            z = 0.0 if bias is None else bias[a]
            for j in range(d):
                z += F[i, j] * weight[a, j]
            out[i, a] = z
    return out


def _content_attention(Q, K, g):
    n = Q.shape[0]
    width = K.shape[1]
    rows = []
    for i in range(n):
        logits = []
        for k in range(n):
            z = 0.0
            for a in range(width):
                z += Q[i, g * width + a] * K[k, a]
            logits.append(z / math.sqrt(width))
        rows.append(_softmax_row(logits))
    return rows


def _apply_heads(maps, V, heads):
    n, d = V.shape
    width = d // heads
    O = np.zeros((n, d))
    for g in range(heads):
        for i in range(n):
            for a in range(width):
                z = 0.0
                for k in range(n):
                    z += maps[g][i][k] * V[k, g * width + a]
                O[i, g * width + a] = z
    return O


def _head_mean(maps, n):
    heads = len(maps)
    A = np.zeros((n, n))
    for i in range(n):
        for k in range(n):
            A[i, k] = sum(maps[g][i][k] for g in range(heads)) / heads
    return A


def oracle_sa(query, key, value, value_bias, F, heads=1):
    n = F.shape[0]
    Q = _project(F, query)
    K = _project(F, key)
    V = _project(F, value, value_bias)
    maps = [_content_attention(Q, K, g) for g in range(heads)]
    return _apply_heads(maps, V, heads), _head_mean(maps, n)


def oracle_sigma(w, V, b):
    n, d = V.shape
    sigma = np.zeros(n)
    for i in range(n):
        z = 0.0
        for a in range(d):
            z += w[0, a] * V[i, a]
        sigma[i] = abs(z) + b
    return sigma


def oracle_pseudo_gaussian(sigma_hat, sigma, distance="linear"):
    n = len(sigma)
    A2 = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            gap = abs(i - j) if distance == "linear" else (i - j) ** 2
            spread = sigma_hat[i] if j < i else sigma[i]
            A2[i, j] = math.exp(-gap / (4.0 * spread * spread))
    return A2


def oracle_tps(query, key, value, value_bias, w, w_prime, b, F, heads=1, log_scale=None, distance="linear"):
    n = F.shape[0]
    Q = _project(F, query)
    K = _project(F, key)
    V = _project(F, value, value_bias)
    sigma_hat = oracle_sigma(w_prime, V, b)
    sigma = oracle_sigma(w, V, b)
    A2 = oracle_pseudo_gaussian(sigma_hat, sigma, distance)
    maps = []
    for g in range(heads):
        scale = 1.0 if log_scale is None else math.exp(log_scale[g])
        a1 = _content_attention(Q, K, g)
        rows = []
        for i in range(n):
            combined = [(scale * a1[i][k] + A2[i, k]) / 2.0 for k in range(n)]
            total = sum(combined)
            rows.append([c / total for c in combined])
        maps.append(rows)
    return _apply_heads(maps, V, heads), _head_mean(maps, n), A2, sigma_hat, sigma


def oracle_attention(kind, weights, F):
    """
    Evaluates one attention kind by loops.

    Parameters:
    kind: (str) "cta", "gta", "sa" or "tps"
    weights: (dict) arrays named like the block parameters: w1, w2, w3 for
        the gates; query, key, value, value_bias, and for TPS w, w_prime, b,
        optionally log_scale, heads and distance
    F: (ndarray) the input

    Returns:
    (O, A) for cta, gta and sa; (O, A, A2, sigma_hat, sigma) for tps
    """
    if kind == "cta":
        return oracle_cta(weights["w1"], weights["w2"], F)
    if kind == "gta":
        return oracle_gta(weights["w1"], weights["w2"], weights["w3"], F)
    heads = weights.get("heads", 1)
    if kind == "sa":
        return oracle_sa(weights["query"], weights["key"], weights["value"], weights["value_bias"], F, heads)
    if kind == "tps":
        return oracle_tps(
            weights["query"],
            weights["key"],
            weights["value"],
            weights["value_bias"],
            weights["w"],
            weights["w_prime"],
            weights["b"],
            F,
            heads,
            weights.get("log_scale"),
            weights.get("distance", "linear"),
        )
    raise ValueError(f"unknown attention kind {kind!r}")
